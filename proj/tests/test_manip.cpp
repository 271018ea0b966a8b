#include <gtest/gtest.h>

#include <cmath>

#include "cisru/manip.hpp"

using namespace cisru;
using namespace cisru::manip;

namespace {

// Forward kinematics oracle for the 2-link arm.
Vec2 forward(const Arm& arm, const Pose2D& rover, double q1, double q2) {
  const Pose2D b = arm_base(arm, rover);
  const double a1 = b.theta + q1;
  return {b.x + arm.l1 * std::cos(a1) + arm.l2 * std::cos(a1 + q2),
          b.y + arm.l1 * std::sin(a1) + arm.l2 * std::sin(a1 + q2)};
}

struct Rig {
  Arm arm = make_arm(ManipConfig{});
  ToolInventory inv;
  ToolChangerFsm fsm;
  Rig() { inv.add({"shovel1", ToolKind::Shovel, false, "slot1"}); }
  void step(TcEvent e) { tc_step(fsm, e, arm, inv, "shovel1", "slot1"); }
};

}  // namespace

TEST(Reach, IkMatchesForwardKinematics) {
  const Arm arm = make_arm(ManipConfig{});
  const Pose2D rover{2.0, 1.0, 0.7};
  for (double r : {0.15, 0.5, 0.9, 1.1}) {
    for (double a = -3.0; a < 3.0; a += 0.5) {
      const Pose2D b = arm_base(arm, rover);
      const Vec2 target{b.x + r * std::cos(a), b.y + r * std::sin(a)};
      const auto res = check_reach(arm, rover, target);
      ASSERT_TRUE(res.reachable) << r << " " << a;
      EXPECT_NEAR(distance(forward(arm, rover, res.q1, res.q2), target), 0.0, 1e-9);
    }
  }
  const Pose2D b = arm_base(arm, rover);
  EXPECT_FALSE(check_reach(arm, rover, {b.x + 1.2, b.y}).reachable);
  EXPECT_FALSE(check_reach(arm, rover, {b.x + 0.05, b.y}).reachable);
}

TEST(ToolChanger, MountAndDismountMoveTheTool) {
  Rig r;
  for (auto e : {TcEvent::MountRequested, TcEvent::ArrivedAtSlot, TcEvent::PoseEstimated, TcEvent::ReachOk}) r.step(e);
  EXPECT_EQ(r.fsm.state, TcState::Latch);
  EXPECT_FALSE(r.arm.holding.has_value());
  r.step(TcEvent::Latched);
  EXPECT_EQ(r.fsm.state, TcState::Mounted);
  EXPECT_EQ(r.arm.holding, "shovel1");
  EXPECT_TRUE(r.inv.find("shovel1")->on_arm);
  EXPECT_EQ(r.inv.in_slot("slot1"), nullptr);
  for (auto e : {TcEvent::DismountRequested, TcEvent::Unlatched, TcEvent::Retreated}) r.step(e);
  EXPECT_EQ(r.fsm.state, TcState::Stowed);
  EXPECT_FALSE(r.arm.holding.has_value());
  EXPECT_NE(r.inv.in_slot("slot1"), nullptr);
}

TEST(ToolChanger, FaultsAndReset) {
  Rig r;
  r.step(TcEvent::Latched);
  EXPECT_EQ(r.fsm.state, TcState::Fault);
  EXPECT_EQ(r.fsm.fault_reason, "UnexpectedEvent");
  r.step(TcEvent::MountRequested);  // Fault absorbs everything but Reset
  EXPECT_EQ(r.fsm.state, TcState::Fault);
  r.step(TcEvent::Reset);
  EXPECT_EQ(r.fsm.state, TcState::Stowed);

  for (auto e : {TcEvent::MountRequested, TcEvent::ArrivedAtSlot, TcEvent::PoseEstimated}) r.step(e);
  const auto notice = tc_step(r.fsm, TcEvent::Unreachable, r.arm, r.inv);
  ASSERT_TRUE(notice.has_value());
  EXPECT_EQ(notice->code, "ToolUnreachable");

  Rig wrong;
  tc_step(wrong.fsm, TcEvent::MountRequested, wrong.arm, wrong.inv, "brush9", "");
  EXPECT_EQ(wrong.fsm.fault_reason, "ToolNotInSlot");
}

TEST(ToolChanger, ExhaustiveTransitionsStayDeclared) {
  const std::set<TcState> declared(std::begin(kAllTcStates), std::end(kAllTcStates));
  for (TcState s : kAllTcStates) {
    for (TcEvent e : kAllTcEvents) {
      Rig r;
      r.fsm.state = s;
      r.fsm.tool_id = "shovel1";
      r.step(e);
      EXPECT_TRUE(declared.count(r.fsm.state)) << to_string(s) << " x " << to_string(e);
      if (e == TcEvent::Reset) {
        EXPECT_EQ(r.fsm.state, TcState::Stowed);
      }
    }
  }
}

TEST(SampleCollection, HappyPathAndGuards) {
  StorageState st;
  st.slots.resize(2);
  SampleCollectionFsm f;
  f.sample_id = "s1";
  ScContext ctx{ToolKind::Shovel, 0.5, 0.8, false, &st};
  sc_step(f, ctx);
  EXPECT_EQ(f.state, ScState::Scoop);
  sc_step(f, ctx);
  EXPECT_EQ(f.state, ScState::Transfer);
  sc_step(f, ctx);
  EXPECT_EQ(f.state, ScState::Transfer);  // waits for storage
  ctx.storage_in_reach = true;
  sc_step(f, ctx);
  sc_step(f, ctx);
  EXPECT_EQ(f.state, ScState::Done);
  EXPECT_EQ(f.stored_slot, 0u);
  EXPECT_EQ(st.slots[0], "s1");

  SampleCollectionFsm dup;
  dup.sample_id = "s1";
  dup.state = ScState::Unload;
  sc_step(dup, ctx);
  EXPECT_EQ(dup.fault_reason, "DuplicateSample");

  st.slots[1] = "s2";
  SampleCollectionFsm full;
  full.sample_id = "s3";
  full.state = ScState::Unload;
  sc_step(full, ctx);
  EXPECT_EQ(full.fault_reason, "StorageFull");
}

TEST(SampleCollection, NoScoopWithoutShovel) {
  for (auto tool : {std::optional<ToolKind>{}, std::optional(ToolKind::Brush)}) {
    SampleCollectionFsm f;
    sc_step(f, {tool, 0.1, 0.8, true, nullptr});
    EXPECT_EQ(f.state, ScState::Fault);
    EXPECT_EQ(f.fault_reason, "ToolNotAssembled");
  }
  SampleCollectionFsm forced;
  forced.state = ScState::Scoop;
  sc_step(forced, {ToolKind::Shovel, 0.1, 0.8, true, nullptr});
  EXPECT_EQ(forced.state, ScState::Fault);
  SampleCollectionFsm far;
  sc_step(far, {ToolKind::Shovel, 3.0, 0.8, true, nullptr});
  sc_step(far, {ToolKind::Shovel, 3.0, 0.8, true, nullptr});
  EXPECT_EQ(far.fault_reason, "OutOfScoopRange");
}

TEST(Localize, RangeAndNoise) {
  world::World w(GridMap(10, 10, 1.0, {}, CellState::Free), {});
  world::Entity slot;
  slot.id = "slot1";
  slot.kind = world::EntityKind::ToolSlot;
  slot.pose = {5, 5, 0};
  w.add_entity(slot);
  Rng rng(3);
  const auto est = localize_tool(w, {4.5, 5, 0}, "slot1", 2.0, 0.01, rng);
  EXPECT_NEAR(est.x, 5.0, 0.06);
  EXPECT_NEAR(est.y, 5.0, 0.06);
  EXPECT_THROW(localize_tool(w, {1, 1, 0}, "slot1", 2.0, 0.01, rng), SlotNotVisible);
  EXPECT_THROW(localize_tool(w, {5, 5, 0}, "nope", 2.0, 0.01, rng), SlotNotVisible);
}
