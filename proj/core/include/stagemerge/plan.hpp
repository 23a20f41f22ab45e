#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "stagemerge/hpseq.hpp"
#include "stagemerge/types.hpp"

namespace stagemerge {

// Identity under which plans (and therefore computation) may be shared:
// studies with the same model, dataset and hyper-parameter set append into
// the same plan.
struct CompatKey {
    std::string model;
    std::string dataset;
    std::vector<std::string> hp_set;  // sorted

    std::string to_string() const;
    friend auto operator<=>(const CompatKey&, const CompatKey&) = default;
};

struct RequestEntry {
    RequestId id = 0;
    StepCount end = 0;
    std::vector<TrialRef> subscribers;  // trials merged into this request
};

// One hyper-parameter configuration region. A node owns the step range from
// its boundary up to wherever its descendants or requests reach; checkpoints
// and metrics recorded under it are keyed by absolute step.
struct PlanNode {
    NodeId id = 0;
    StepCount start_step = 0;
    std::optional<NodeId> parent;  // edge boundary == start_step
    std::map<std::string, CanonDesc> config;  // descriptor of each hp at start_step
    std::map<StepCount, CkptHandle> ckpts;
    std::map<StepCount, MetricRecord> metrics;
    std::vector<RequestEntry> requests;
    std::vector<NodeId> children;
    int ref_count = 0;  // pending requests + children
    double runtime_sec_per_step = 0.0;  // measured; <= 0 means unprofiled
};

struct TrialRequest {
    RequestId id = 0;
    StudyId study = 0;
    TrialId trial = 0;
    TrialConfig config;  // end step == config.total_steps
};

struct InsertOutcome {
    enum class Kind { kImmediate, kPending };
    Kind kind = Kind::kPending;
    RequestId request_id = 0;
    NodeId node = 0;
    MetricRecord metrics;  // kImmediate only
    bool attached = false;  // joined an existing pending request
};

struct CompletedRequest {
    RequestId id = 0;
    NodeId node = 0;
    StepCount end = 0;
    std::vector<TrialRef> subscribers;
    MetricRecord metrics;
};

struct PendingRequest {
    NodeId node = 0;
    RequestId id = 0;
    StepCount end = 0;
    std::vector<TrialRef> subscribers;
};

// Append-only merged record of every configuration a study (or several
// studies sharing a compat key) has asked to train, together with the
// checkpoints and metrics produced so far and the requests still waiting.
// Inserting a trial never removes or rewrites nodes.
class SearchPlan {
public:
    explicit SearchPlan(CompatKey key) : key_(std::move(key)) {}

    const CompatKey& key() const { return key_; }
    const std::vector<PlanNode>& nodes() const { return nodes_; }
    const PlanNode& node(NodeId id) const;
    const std::vector<NodeId>& roots() const { return roots_; }
    std::size_t node_count() const { return nodes_.size(); }
    std::uint64_t version() const { return version_; }

    InsertOutcome insert_trial(const TrialRequest& req);

    // Returns true when the checkpoint is new; re-recording the same handle
    // is a no-op and a conflicting handle at the same step is rejected.
    bool record_checkpoint(NodeId node, StepCount step, const CkptHandle& handle);

    // Records metrics and completes every request whose path ends here.
    std::vector<CompletedRequest> record_metrics(NodeId node, StepCount step,
                                                 const MetricRecord& record);

    // Drops `trial` from whatever pending request it subscribes to; entries
    // left with no subscribers are removed. Returns true if anything changed.
    bool cancel_trial(const TrialRef& trial);

    std::vector<PendingRequest> pending_requests() const;
    bool has_pending() const;

    // Root-to-node chain of ids.
    std::vector<NodeId> path_to(NodeId id) const;

    // Digest of the canonical value prefix [0, steps) along this node's
    // path; equal to prefix_digest() of any trial whose configuration
    // follows the same path.
    std::uint64_t prefix_digest_at(NodeId id, StepCount steps) const;

    // Pointwise hyper-parameter value under `id`'s configuration.
    double value_at(NodeId id, const std::string& hp, StepCount step) const;

    void set_runtime(NodeId id, double sec_per_step);

    const std::set<StudyId>& observed_studies() const { return observed_studies_; }

    // Structural identity modulo node and request ids; equal for plans built
    // from the same trial multiset in any insertion order.
    std::string signature() const;

    std::string to_json(int indent = 2) const;
    std::string to_dot() const;

    static SearchPlan from_json(const std::string& text);

private:
    PlanNode& node_mut(NodeId id);
    NodeId new_node(StepCount start, std::optional<NodeId> parent,
                    std::map<std::string, CanonDesc> config);

    CompatKey key_;
    std::vector<PlanNode> nodes_;  // id == index
    std::vector<NodeId> roots_;
    std::set<StudyId> observed_studies_;
    std::map<RequestId, std::pair<NodeId, StepCount>> pending_ids_;
    std::map<RequestId, std::pair<NodeId, StepCount>> completed_;
    std::uint64_t version_ = 0;

    friend class PlanStore;
};

// Restriction of a plan to the requests of a study subset: same node graph,
// filtered request entries.
SearchPlan kwise_view(const SearchPlan& plan, const std::vector<StudyId>& studies);

// One plan per compat key, persisted as one file per key with atomic
// whole-file rewrites.
class PlanStore {
public:
    PlanStore() = default;
    explicit PlanStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

    // Fetches (loading from disk if present) or creates the plan for a key.
    SearchPlan& open(const CompatKey& key);
    bool has(const CompatKey& key) const { return plans_.count(key) > 0; }

    // Atomically rewrites every dirty plan file. No-op without a directory.
    void flush();

    static std::string file_name(const CompatKey& key);

private:
    std::optional<std::filesystem::path> dir_;
    std::map<CompatKey, SearchPlan> plans_;
};

}  // namespace stagemerge
