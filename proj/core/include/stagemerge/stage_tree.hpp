#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stagemerge/plan.hpp"
#include "stagemerge/types.hpp"

namespace stagemerge {

struct CkptRef {
    NodeId node = 0;
    StepCount step = 0;
    friend auto operator<=>(const CkptRef&, const CkptRef&) = default;
};

enum class ResumeKind { kCheckpoint, kScratch, kBlocked };

struct ResumePoint {
    ResumeKind kind = ResumeKind::kScratch;
    CkptRef ckpt;  // valid when kind == kCheckpoint
};

using FindCheckpointMemo = std::map<std::pair<NodeId, StepCount>, ResumePoint>;

// Nearest checkpoint at or before `step` along the node's root path. Walks
// the node's own checkpoints downward, then recurses into the parent
// configuration, memoizing every (node, step) visited. A configuration that
// is currently running resolves to kBlocked; a bare root with no usable
// checkpoint resolves to kScratch (train from step 0).
ResumePoint find_latest_checkpoint(const SearchPlan& plan, NodeId node, StepCount step,
                                   FindCheckpointMemo* memo = nullptr,
                                   const std::set<NodeId>* running = nullptr);

// One schedulable unit: a contiguous step interval under a single plan-node
// configuration. Root stages carry the checkpoint they resume from (or
// train from scratch); non-root stages continue from the stage that feeds
// them. start == end only for eval-only stages whose resume checkpoint sits
// exactly at a request's end step.
struct Stage {
    int id = 0;
    NodeId node = 0;
    StepCount start = 0;
    StepCount end = 0;
    std::optional<CkptRef> resume;
    std::optional<int> parent;
    std::vector<int> children;
    std::vector<RequestId> serves;
    bool eval_at_end = false;  // a serving request ends here or it is an eval mark
};

struct StageTree {
    std::vector<Stage> stages;
    std::vector<int> roots;
    std::uint64_t generation = 0;  // plan version the tree was built from

    bool empty() const { return stages.empty(); }
    std::size_t leaf_count() const;
    std::string to_dot() const;
};

struct TreeBuildContext {
    // Configurations currently being trained; requests whose checkpoint
    // resolution reaches one of these wait for the next trigger.
    std::set<NodeId> running;
    // Evaluation intervals (steps) of the studies in flight; stages split at
    // these marks so metric reports align with stage ends.
    std::vector<StepCount> eval_intervals;
    bool use_memo = true;
};

// Generates the transient schedulable view of everything the plan still owes:
// for each pending request, stages tile [resume point, end step), split at
// plan-node boundaries, at other requests' resume/end points, and at eval
// marks; identical (node, range) stages shared by several requests appear
// once.
StageTree build_stage_tree(const SearchPlan& plan, const TreeBuildContext& ctx = {});

// Per-request training intervals implied by a tree: the (node, lo, hi)
// pieces on the request's root-to-leaf path, merged per node.
std::map<RequestId, std::vector<std::tuple<NodeId, StepCount, StepCount>>>
request_intervals(const StageTree& tree);

// Seconds-per-step estimate for a node's configuration, in integer
// microseconds.
using StepTimeEstimator = std::function<TimeUs(NodeId)>;

// Root-to-leaf path with the longest estimated duration among stages not
// yet marked scheduled; ties prefer the smaller node id, then the smaller
// start step. Only paths rooted at tree roots are eligible: a stage under an
// already-extracted stage has no checkpoint to resume from yet.
std::vector<int> critical_path(const StageTree& tree, const StepTimeEstimator& step_us,
                               const std::vector<bool>* scheduled = nullptr);

TimeUs path_duration_us(const StageTree& tree, const std::vector<int>& path,
                        const StepTimeEstimator& step_us);

}  // namespace stagemerge
