#include "coopsim/channel.hpp"

#include <gtest/gtest.h>

#include "coopsim/rng.hpp"

namespace coopsim {
namespace {

Message random_message(Rng& rng, size_t k, size_t d) {
  Message m;
  m.sender_id = static_cast<uint32_t>(rng.below(1000));
  m.frame_id = static_cast<uint32_t>(rng.below(600));
  m.sender_pose = {f32_round(rng.uniform(-100, 100)), f32_round(rng.uniform(-100, 100)), 0.0,
                   f32_round(rng.uniform(-3, 3))};
  m.keypoints.resize(k);
  for (Vec3& p : m.keypoints)
    p = {f32_round(rng.uniform(-40, 40)), f32_round(rng.uniform(-40, 40)), f32_round(rng.uniform(0, 4))};
  if (d > 0) {
    m.features.assign(k, std::vector<double>(d));
    for (auto& row : m.features)
      for (double& v : row) v = f32_round(rng.normal());
  }
  return m;
}

bool messages_equal(const Message& a, const Message& b) {
  if (a.sender_id != b.sender_id || a.frame_id != b.frame_id) return false;
  if (a.sender_pose.x != b.sender_pose.x || a.sender_pose.y != b.sender_pose.y ||
      a.sender_pose.z != b.sender_pose.z || a.sender_pose.yaw != b.sender_pose.yaw)
    return false;
  if (a.k() != b.k() || a.d() != b.d()) return false;
  for (size_t i = 0; i < a.k(); ++i) {
    if (a.keypoints[i].x != b.keypoints[i].x || a.keypoints[i].y != b.keypoints[i].y ||
        a.keypoints[i].z != b.keypoints[i].z)
      return false;
  }
  return a.features == b.features;
}

TEST(Wire, PaperScaleMessageIs67104Bytes) {
  Rng rng(1);
  Message m = random_message(rng, 128, 128);
  EXPECT_EQ(encode_wire(m).size(), 67104u);
  EXPECT_EQ(wire_bytes(128, 128), 32u + 1536u + 65536u);
}

TEST(Wire, EmptyMessageIsHeaderOnly) {
  Message m;
  m.sender_id = 3;
  EXPECT_EQ(encode_wire(m).size(), 32u);
}

TEST(Wire, RoundTripBitExact) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    size_t k = rng.below(20);
    size_t d = k == 0 ? 0 : rng.below(12);
    Message m = random_message(rng, k, d);
    auto bytes = encode_wire(m);
    EXPECT_EQ(bytes.size(), wire_bytes(k, d));
    Message back = decode_wire(bytes);
    EXPECT_TRUE(messages_equal(m, back)) << "trial " << trial;
    EXPECT_EQ(encode_wire(back), bytes);
  }
}

TEST(Wire, RejectsOversizedAndNonFinite) {
  Message m;
  m.frame_id = 1 << 17;
  EXPECT_THROW(encode_wire(m), std::invalid_argument);
  m.frame_id = 0;
  m.keypoints.push_back({std::numeric_limits<double>::quiet_NaN(), 0, 0});
  EXPECT_THROW(encode_wire(m), std::invalid_argument);
}

TEST(Bandwidth, PaperScaleAccounting) {
  double mbps = bandwidth_mbps(128, 128, 10.0);
  EXPECT_LT(mbps, 6.0);
  EXPECT_GE(mbps, 4.6);
  EXPECT_NEAR(mbps, 5.37, 0.01);
}

TEST(Bandwidth, RawSharingExceeds55Mbps) {
  double mbps = bandwidth_mbps(65536, 0, 10.0);
  EXPECT_GT(mbps, 55.0);
  EXPECT_NEAR(mbps, 62.9, 0.2);
}

TEST(Bandwidth, TinyMessageIs384BitsPerSecond) {
  EXPECT_DOUBLE_EQ(bandwidth_mbps(1, 1, 1.0) * 1e6, 384.0);
}

TEST(Bandwidth, MonotoneInEachArgument) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    size_t k = 1 + rng.below(200), d = 1 + rng.below(200);
    double r = rng.uniform(0.1, 50.0);
    EXPECT_LT(bandwidth_mbps(k, d, r), bandwidth_mbps(k + 1, d, r));
    EXPECT_LT(bandwidth_mbps(k, d, r), bandwidth_mbps(k, d + 1, r));
    EXPECT_LT(bandwidth_mbps(k, d, r), bandwidth_mbps(k, d, r + 0.5));
  }
}

std::vector<NeighborInfo> ring_of_vehicles(size_t n, double radius) {
  std::vector<NeighborInfo> v(n);
  for (size_t i = 0; i < n; ++i) {
    double a = 2.0 * kPi * static_cast<double>(i) / static_cast<double>(n);
    v[i] = {static_cast<uint32_t>(i + 1), Pose{radius * std::cos(a), radius * std::sin(a), 0, 0}, true};
  }
  return v;
}

TEST(SelectNeighbors, SingleCandidateAlwaysPicked) {
  Rng rng(4);
  std::vector<NeighborInfo> v{{5, Pose{10, 0, 0, 0}, true}};
  auto ids = select_neighbors(v, 1, Pose{}, 40.0, 3, rng);
  EXPECT_EQ(ids, (std::vector<uint32_t>{5}));
}

TEST(SelectNeighbors, NoneInRangeGivesEmpty) {
  Rng rng(5);
  std::vector<NeighborInfo> v{{5, Pose{100, 0, 0, 0}, true}, {6, Pose{1, 0, 0, 0}, false}};
  EXPECT_TRUE(select_neighbors(v, 1, Pose{}, 40.0, 3, rng).empty());
}

TEST(SelectNeighbors, ExcludesEgo) {
  Rng rng(6);
  std::vector<NeighborInfo> v{{1, Pose{}, true}, {2, Pose{3, 0, 0, 0}, true}};
  auto ids = select_neighbors(v, 1, Pose{}, 40.0, 3, rng);
  EXPECT_EQ(ids, (std::vector<uint32_t>{2}));
}

TEST(SelectNeighbors, UniformFrequencyOverManyDraws) {
  Rng rng(7);
  auto v = ring_of_vehicles(10, 20.0);
  std::vector<int> counts(11, 0);
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) {
    auto ids = select_neighbors(v, 99, Pose{}, 40.0, 3, rng);
    ASSERT_EQ(ids.size(), 3u);
    for (uint32_t id : ids) counts[id]++;
  }
  for (size_t i = 1; i <= 10; ++i) {
    double freq = static_cast<double>(counts[i]) / draws;
    EXPECT_NEAR(freq, 0.3, 0.01) << "vehicle " << i;
  }
}

TEST(SelectNeighbors, DeterministicGivenSeed) {
  auto v = ring_of_vehicles(8, 10.0);
  Rng a(42), b(42);
  for (int t = 0; t < 50; ++t)
    EXPECT_EQ(select_neighbors(v, 99, Pose{}, 40.0, 3, a), select_neighbors(v, 99, Pose{}, 40.0, 3, b));
}

TEST(Transmit, LosslessAmpleCapacityDeliversAll) {
  Rng seeder(8), rng(9);
  std::vector<Message> msgs;
  for (int i = 0; i < 5; ++i) msgs.push_back(random_message(seeder, 16, 8));
  ChannelConfig cfg;
  cfg.packet_loss_prob = 0.0;
  auto out = transmit(msgs, cfg, rng);
  ASSERT_EQ(out.size(), msgs.size());
  for (size_t i = 0; i < out.size(); ++i) EXPECT_TRUE(messages_equal(out[i], msgs[i]));
}

TEST(Transmit, LossRateMatchesBernoulliBound) {
  Rng rng(10);
  ChannelConfig cfg;  // 5% loss
  const int total = 100000;
  std::vector<size_t> sizes(total, 100);
  cfg.throughput_mbps = 1e6;  // capacity out of the way
  auto kept = transmit_sizes(sizes, cfg, rng);
  double frac = static_cast<double>(kept.size()) / total;
  EXPECT_NEAR(frac, 0.95, 0.005);
}

TEST(Transmit, CapacityDropArithmetic) {
  // 3 messages of 67,104 B each against a 0.1 s window at 7.2 Mbps
  // (90,000 B budget): first delivered, second and third capacity-dropped.
  Rng seeder(11), rng(12);
  std::vector<Message> msgs;
  for (int i = 0; i < 3; ++i) {
    Message m = random_message(seeder, 128, 128);
    m.sender_id = static_cast<uint32_t>(i);
    msgs.push_back(m);
  }
  ChannelConfig cfg;
  cfg.packet_loss_prob = 0.0;
  EXPECT_EQ(encode_wire(msgs[0]).size(), 67104u);
  auto out = transmit(msgs, cfg, rng);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].sender_id, 0u);
}

TEST(Transmit, DeliveredIsOrderedSubsetNoCorruption) {
  Rng seeder(13);
  std::vector<Message> msgs;
  for (int i = 0; i < 40; ++i) {
    Message m = random_message(seeder, 8, 4);
    m.sender_id = static_cast<uint32_t>(i);
    msgs.push_back(m);
  }
  ChannelConfig cfg;
  cfg.packet_loss_prob = 0.3;
  Rng rng(14);
  auto out = transmit(msgs, cfg, rng);
  EXPECT_LE(out.size(), msgs.size());
  uint32_t last = 0;
  bool first = true;
  for (const Message& m : out) {
    if (!first) EXPECT_GT(m.sender_id, last);
    EXPECT_TRUE(messages_equal(m, msgs[m.sender_id]));
    last = m.sender_id;
    first = false;
  }
}

TEST(Transmit, ReproducibleGivenSeed) {
  Rng seeder(15);
  std::vector<Message> msgs;
  for (int i = 0; i < 30; ++i) msgs.push_back(random_message(seeder, 4, 2));
  ChannelConfig cfg;
  Rng a(77), b(77);
  auto ka = transmit(msgs, cfg, a);
  auto kb = transmit(msgs, cfg, b);
  ASSERT_EQ(ka.size(), kb.size());
  for (size_t i = 0; i < ka.size(); ++i) EXPECT_TRUE(messages_equal(ka[i], kb[i]));
}

}  // namespace
}  // namespace coopsim
