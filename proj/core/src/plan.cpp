#include "stagemerge/plan.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "json_util.hpp"

namespace stagemerge {

using detail::json;

std::string CompatKey::to_string() const {
    std::string s = model + "|" + dataset + "|";
    for (std::size_t i = 0; i < hp_set.size(); ++i) {
        if (i) s += ",";
        s += hp_set[i];
    }
    return s;
}

const PlanNode& SearchPlan::node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw IntegrityError("unknown plan node " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
}

PlanNode& SearchPlan::node_mut(NodeId id) {
    return const_cast<PlanNode&>(node(id));
}

NodeId SearchPlan::new_node(StepCount start, std::optional<NodeId> parent,
                            std::map<std::string, CanonDesc> config) {
    NodeId id = static_cast<NodeId>(nodes_.size());
    PlanNode n;
    n.id = id;
    n.start_step = start;
    n.parent = parent;
    n.config = std::move(config);
    nodes_.push_back(std::move(n));
    if (parent) {
        node_mut(*parent).children.push_back(id);
        node_mut(*parent).ref_count += 1;
    } else {
        roots_.push_back(id);
    }
    return id;
}

InsertOutcome SearchPlan::insert_trial(const TrialRequest& req) {
    validate_config(req.config);
    {
        std::vector<std::string> names;
        names.reserve(req.config.sequences.size());
        for (const auto& [name, _] : req.config.sequences) names.push_back(name);
        if (names != key_.hp_set)
            throw ConfigError("trial hp set does not match plan key " + key_.to_string());
    }
    // Re-submitting a known request id is a no-op returning existing state.
    if (auto it = pending_ids_.find(req.id); it != pending_ids_.end()) {
        InsertOutcome out;
        out.kind = InsertOutcome::Kind::kPending;
        out.request_id = req.id;
        out.node = it->second.first;
        out.attached = true;
        return out;
    }
    if (auto it = completed_.find(req.id); it != completed_.end()) {
        InsertOutcome out;
        out.kind = InsertOutcome::Kind::kImmediate;
        out.request_id = req.id;
        out.node = it->second.first;
        out.metrics = node(it->second.first).metrics.at(it->second.second);
        return out;
    }

    observed_studies_.insert(req.study);
    version_ += 1;

    const StepCount end = req.config.total_steps;
    const auto combined = combined_segments(req.config);

    // Match the first region against the roots; merging is exhaustive, so at
    // most one root can carry this configuration.
    NodeId cur = -1;
    for (NodeId r : roots_) {
        if (node(r).config == combined[0].descs) {
            cur = r;
            break;
        }
    }
    if (cur < 0) cur = new_node(0, std::nullopt, combined[0].descs);

    // Walk the remaining regions, descending at each of the trial's own
    // descriptor-change boundaries and creating nodes only for unmatched
    // suffixes.
    for (std::size_t i = 1; i < combined.size(); ++i) {
        const StepCount boundary = combined[i].start;
        if (boundary >= end) break;
        NodeId next = -1;
        for (NodeId c : node(cur).children) {
            if (node(c).start_step == boundary && node(c).config == combined[i].descs) {
                next = c;
                break;
            }
        }
        if (next < 0) next = new_node(boundary, cur, combined[i].descs);
        cur = next;
    }

    PlanNode& terminal = node_mut(cur);
    if (auto it = terminal.metrics.find(end); it != terminal.metrics.end()) {
        InsertOutcome out;
        out.kind = InsertOutcome::Kind::kImmediate;
        out.request_id = req.id;
        out.node = cur;
        out.metrics = it->second;
        completed_.emplace(req.id, std::make_pair(cur, end));
        return out;
    }
    for (RequestEntry& entry : terminal.requests) {
        if (entry.end == end) {
            TrialRef ref{req.study, req.trial};
            if (std::find(entry.subscribers.begin(), entry.subscribers.end(), ref) ==
                entry.subscribers.end())
                entry.subscribers.push_back(ref);
            InsertOutcome out;
            out.kind = InsertOutcome::Kind::kPending;
            out.request_id = entry.id;
            out.node = cur;
            out.attached = true;
            return out;
        }
    }
    RequestEntry entry;
    entry.id = req.id;
    entry.end = end;
    entry.subscribers.push_back(TrialRef{req.study, req.trial});
    terminal.requests.push_back(std::move(entry));
    terminal.ref_count += 1;
    pending_ids_.emplace(req.id, std::make_pair(cur, end));

    InsertOutcome out;
    out.kind = InsertOutcome::Kind::kPending;
    out.request_id = req.id;
    out.node = cur;
    return out;
}

bool SearchPlan::record_checkpoint(NodeId id, StepCount step, const CkptHandle& handle) {
    PlanNode& n = node_mut(id);
    if (step <= n.start_step)
        throw IntegrityError("checkpoint at step " + std::to_string(step) +
                             " outside node " + std::to_string(id) + "'s range");
    auto [it, inserted] = n.ckpts.emplace(step, handle);
    if (!inserted && it->second != handle)
        throw IntegrityError("conflicting checkpoint handles at node " + std::to_string(id) +
                             " step " + std::to_string(step));
    if (inserted) version_ += 1;
    return inserted;
}

std::vector<CompletedRequest> SearchPlan::record_metrics(NodeId id, StepCount step,
                                                         const MetricRecord& record) {
    PlanNode& n = node_mut(id);
    if (step <= n.start_step)
        throw IntegrityError("metrics at step " + std::to_string(step) +
                             " outside node " + std::to_string(id) + "'s range");
    auto it = n.metrics.find(step);
    if (it == n.metrics.end()) {
        n.metrics.emplace(step, record);
        version_ += 1;
    } else if (it->second != record) {
        throw IntegrityError("conflicting metrics at node " + std::to_string(id) +
                             " step " + std::to_string(step));
    }

    std::vector<CompletedRequest> done;
    auto req = n.requests.begin();
    while (req != n.requests.end()) {
        if (req->end == step) {
            CompletedRequest c;
            c.id = req->id;
            c.node = id;
            c.end = step;
            c.subscribers = req->subscribers;
            c.metrics = n.metrics.at(step);
            done.push_back(std::move(c));
            completed_.emplace(req->id, std::make_pair(id, step));
            pending_ids_.erase(req->id);
            n.ref_count -= 1;
            req = n.requests.erase(req);
            version_ += 1;
        } else {
            ++req;
        }
    }
    return done;
}

bool SearchPlan::cancel_trial(const TrialRef& trial) {
    bool changed = false;
    for (PlanNode& n : nodes_) {
        auto req = n.requests.begin();
        while (req != n.requests.end()) {
            auto sub = std::find(req->subscribers.begin(), req->subscribers.end(), trial);
            if (sub != req->subscribers.end()) {
                req->subscribers.erase(sub);
                changed = true;
                version_ += 1;
            }
            if (req->subscribers.empty()) {
                pending_ids_.erase(req->id);
                n.ref_count -= 1;
                req = n.requests.erase(req);
            } else {
                ++req;
            }
        }
    }
    return changed;
}

std::vector<PendingRequest> SearchPlan::pending_requests() const {
    std::vector<PendingRequest> out;
    for (const PlanNode& n : nodes_) {
        for (const RequestEntry& e : n.requests) {
            PendingRequest p;
            p.node = n.id;
            p.id = e.id;
            p.end = e.end;
            p.subscribers = e.subscribers;
            out.push_back(std::move(p));
        }
    }
    std::sort(out.begin(), out.end(), [](const PendingRequest& a, const PendingRequest& b) {
        return std::tie(a.node, a.end, a.id) < std::tie(b.node, b.end, b.id);
    });
    return out;
}

bool SearchPlan::has_pending() const {
    for (const PlanNode& n : nodes_)
        if (!n.requests.empty()) return true;
    return false;
}

std::vector<NodeId> SearchPlan::path_to(NodeId id) const {
    std::vector<NodeId> path;
    for (std::optional<NodeId> cur = id; cur; cur = node(*cur).parent)
        path.push_back(*cur);
    std::reverse(path.begin(), path.end());
    return path;
}

std::uint64_t SearchPlan::prefix_digest_at(NodeId id, StepCount steps) const {
    const auto path = path_to(id);
    std::uint64_t h = fnv1a64("hp-prefix");
    for (std::size_t i = 0; i < path.size(); ++i) {
        const PlanNode& n = node(path[i]);
        if (n.start_step >= steps) break;
        StepCount seg_end = i + 1 < path.size() ? node(path[i + 1]).start_step : steps;
        StepCount dur = std::min(seg_end, steps) - n.start_step;
        h = fnv1a64(&n.start_step, sizeof n.start_step, h);
        h = fnv1a64(&dur, sizeof dur, h);
        for (const auto& [name, desc] : n.config) {
            h = fnv1a64(name, h);
            h = fnv1a64(desc.to_string(), h);
        }
    }
    h = fnv1a64(&steps, sizeof steps, h);
    return h;
}

double SearchPlan::value_at(NodeId id, const std::string& hp, StepCount step) const {
    const PlanNode& n = node(id);
    auto it = n.config.find(hp);
    if (it == n.config.end())
        throw IntegrityError("node " + std::to_string(id) + " has no hp '" + hp + "'");
    if (step < n.start_step)
        throw IntegrityError("value_at before node boundary");
    const CanonDesc& d = it->second;
    if (d.is_const) return d.value.to_double();
    return stagemerge::value_at(d.atom, d.local + (step - n.start_step));
}

void SearchPlan::set_runtime(NodeId id, double sec_per_step) {
    node_mut(id).runtime_sec_per_step = sec_per_step;
}

namespace {

std::string config_text(const std::map<std::string, CanonDesc>& config) {
    std::string s;
    for (const auto& [name, desc] : config) {
        if (!s.empty()) s += ";";
        s += name + "=" + desc.to_string();
    }
    return s;
}

}  // namespace

std::string SearchPlan::signature() const {
    // Recursive structural text: children ordered by (boundary, config),
    // request entries by (end, subscribers); ids do not appear.
    std::function<std::string(NodeId)> render = [&](NodeId id) {
        const PlanNode& n = node(id);
        std::ostringstream os;
        os << "{@" << n.start_step << " " << config_text(n.config);
        os << " ck:[";
        for (const auto& [step, _] : n.ckpts) os << step << ",";
        os << "] mx:[";
        for (const auto& [step, _] : n.metrics) os << step << ",";
        os << "] rq:[";
        std::vector<std::pair<StepCount, std::string>> reqs;
        for (const RequestEntry& e : n.requests) {
            std::string subs;
            std::vector<TrialRef> sorted_subs = e.subscribers;
            std::sort(sorted_subs.begin(), sorted_subs.end());
            for (const TrialRef& t : sorted_subs)
                subs += std::to_string(t.study) + ":" + std::to_string(t.trial) + " ";
            reqs.emplace_back(e.end, subs);
        }
        std::sort(reqs.begin(), reqs.end());
        for (const auto& [end, subs] : reqs) os << end << "(" << subs << "),";
        os << "] ";
        std::vector<std::pair<std::pair<StepCount, std::string>, NodeId>> kids;
        for (NodeId c : n.children)
            kids.push_back({{node(c).start_step, config_text(node(c).config)}, c});
        std::sort(kids.begin(), kids.end());
        for (const auto& [_, c] : kids) os << render(c);
        os << "}";
        return os.str();
    };
    std::vector<std::string> root_sigs;
    for (NodeId r : roots_) root_sigs.push_back(render(r));
    std::sort(root_sigs.begin(), root_sigs.end());
    std::string sig = key_.to_string();
    for (const auto& s : root_sigs) sig += s;
    return sig;
}

std::string SearchPlan::to_json(int indent) const {
    json j;
    j["compat_key"] = {{"model", key_.model}, {"dataset", key_.dataset}, {"hp_set", key_.hp_set}};
    j["roots"] = roots_;
    json nodes = json::array();
    for (const PlanNode& n : nodes_) {
        json nj;
        nj["id"] = n.id;
        if (n.parent)
            nj["parent"] = *n.parent;
        else
            nj["parent"] = nullptr;
        nj["boundary"] = n.start_step;
        json cfg;
        for (const auto& [name, desc] : n.config) cfg[name] = detail::desc_to_json(desc);
        nj["hp_config"] = cfg;
        json ck;
        for (const auto& [step, handle] : n.ckpts) ck[std::to_string(step)] = handle;
        nj["ckpt"] = ck;
        json mx;
        for (const auto& [step, record] : n.metrics) mx[std::to_string(step)] = record;
        nj["metrics"] = mx;
        json rq = json::array();
        for (const RequestEntry& e : n.requests) {
            json ej;
            ej["id"] = e.id;
            ej["end"] = e.end;
            json subs = json::array();
            for (const TrialRef& t : e.subscribers) subs.push_back({t.study, t.trial});
            ej["trials"] = subs;
            rq.push_back(ej);
        }
        nj["requests"] = rq;
        nj["ref_count"] = n.ref_count;
        nj["runtime_sec_per_step"] = n.runtime_sec_per_step;
        nodes.push_back(nj);
    }
    j["nodes"] = nodes;
    json studies = json::array();
    for (StudyId s : observed_studies_) studies.push_back(s);
    j["studies"] = studies;
    json completed;
    for (const auto& [id, where] : completed_)
        completed[std::to_string(id)] = {where.first, where.second};
    j["completed_requests"] = completed;
    return j.dump(indent);
}

SearchPlan SearchPlan::from_json(const std::string& text) {
    json j = json::parse(text);
    CompatKey key;
    key.model = j.at("compat_key").at("model").get<std::string>();
    key.dataset = j.at("compat_key").at("dataset").get<std::string>();
    key.hp_set = j.at("compat_key").at("hp_set").get<std::vector<std::string>>();
    SearchPlan plan(key);
    for (const auto& nj : j.at("nodes")) {
        PlanNode n;
        n.id = nj.at("id").get<NodeId>();
        if (!nj.at("parent").is_null()) n.parent = nj.at("parent").get<NodeId>();
        n.start_step = nj.at("boundary").get<StepCount>();
        for (const auto& [name, dj] : nj.at("hp_config").items())
            n.config.emplace(name, detail::desc_from_json(dj));
        for (const auto& [step, handle] : nj.at("ckpt").items())
            n.ckpts.emplace(std::stoll(step), handle.get<std::string>());
        for (const auto& [step, record] : nj.at("metrics").items())
            n.metrics.emplace(std::stoll(step), record.get<MetricRecord>());
        for (const auto& ej : nj.at("requests")) {
            RequestEntry e;
            e.id = ej.at("id").get<RequestId>();
            e.end = ej.at("end").get<StepCount>();
            for (const auto& t : ej.at("trials"))
                e.subscribers.push_back(TrialRef{t.at(0).get<StudyId>(), t.at(1).get<TrialId>()});
            plan.pending_ids_.emplace(e.id, std::make_pair(n.id, e.end));
            n.requests.push_back(std::move(e));
        }
        n.ref_count = nj.at("ref_count").get<int>();
        n.runtime_sec_per_step = nj.at("runtime_sec_per_step").get<double>();
        plan.nodes_.push_back(std::move(n));
    }
    plan.roots_ = j.at("roots").get<std::vector<NodeId>>();
    // children lists are derivable; rebuild them
    for (PlanNode& n : plan.nodes_) n.children.clear();
    for (const PlanNode& n : plan.nodes_)
        if (n.parent) plan.node_mut(*n.parent).children.push_back(n.id);
    for (const auto& s : j.at("studies")) plan.observed_studies_.insert(s.get<StudyId>());
    for (const auto& [id, where] : j.at("completed_requests").items())
        plan.completed_.emplace(std::stoll(id),
                                std::make_pair(where.at(0).get<NodeId>(),
                                               where.at(1).get<StepCount>()));
    return plan;
}

std::string SearchPlan::to_dot() const {
    std::ostringstream os;
    os << "digraph plan {\n  rankdir=LR;\n  node [shape=box, fontname=\"monospace\"];\n";
    for (const PlanNode& n : nodes_) {
        os << "  n" << n.id << " [label=\"n" << n.id << " @" << n.start_step << "\\n";
        for (const auto& [name, desc] : n.config) os << name << "=" << desc.to_string() << "\\n";
        if (!n.ckpts.empty()) {
            os << "ckpt:";
            for (const auto& [step, _] : n.ckpts) os << " " << step;
            os << "\\n";
        }
        if (!n.requests.empty()) {
            os << "req:";
            for (const RequestEntry& e : n.requests) os << " " << e.end;
            os << "\\n";
        }
        os << "\"];\n";
        if (n.parent)
            os << "  n" << *n.parent << " -> n" << n.id << " [label=\"" << n.start_step << "\"];\n";
    }
    os << "}\n";
    return os.str();
}

SearchPlan kwise_view(const SearchPlan& plan, const std::vector<StudyId>& studies) {
    for (StudyId s : studies)
        if (!plan.observed_studies().count(s))
            throw ConfigError("kwise_view: unknown study id " + std::to_string(s));
    std::set<StudyId> keep(studies.begin(), studies.end());
    SearchPlan view = plan;
    for (const PlanNode& n : plan.nodes()) {
        // operate on the copy's node
        PlanNode& vn = const_cast<PlanNode&>(view.node(n.id));
        auto req = vn.requests.begin();
        while (req != vn.requests.end()) {
            auto sub = req->subscribers.begin();
            while (sub != req->subscribers.end()) {
                if (!keep.count(sub->study))
                    sub = req->subscribers.erase(sub);
                else
                    ++sub;
            }
            if (req->subscribers.empty())
                req = vn.requests.erase(req);
            else
                ++req;
        }
    }
    return view;
}

std::string PlanStore::file_name(const CompatKey& key) {
    std::string sanitized;
    for (char c : key.to_string())
        sanitized += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')
                         ? c
                         : '_';
    char suffix[20];
    std::snprintf(suffix, sizeof suffix, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(key.to_string())));
    return sanitized + "-" + suffix + ".json";
}

SearchPlan& PlanStore::open(const CompatKey& key) {
    auto it = plans_.find(key);
    if (it != plans_.end()) return it->second;
    if (dir_) {
        auto path = *dir_ / file_name(key);
        if (std::filesystem::exists(path)) {
            std::ifstream in(path);
            std::stringstream buf;
            buf << in.rdbuf();
            auto [pos, _] = plans_.emplace(key, SearchPlan::from_json(buf.str()));
            return pos->second;
        }
    }
    auto [pos, _] = plans_.emplace(key, SearchPlan(key));
    return pos->second;
}

void PlanStore::flush() {
    if (!dir_) return;
    std::filesystem::create_directories(*dir_);
    for (const auto& [key, plan] : plans_) {
        auto path = *dir_ / file_name(key);
        auto tmp = path;
        tmp += ".tmp";
        {
            std::ofstream out(tmp);
            out << plan.to_json();
        }
        std::filesystem::rename(tmp, path);
    }
}

}  // namespace stagemerge
