#pragma once

// Clusterwise conformal prediction: quantile embeddings of per-class score
// distributions, k-means grouping, hierarchy-driven size thresholding,
// representation complexity, similarity-based calibration and the
// statistical-distance coverage bounds.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "conformal/calibrate.hpp"
#include "conformal/conditional.hpp"
#include "conformal/core.hpp"

namespace conformal {

// ---------------------------------------------------------------------------
// Hierarchies
// ---------------------------------------------------------------------------

// Rooted tree whose nodes are subsets of {1..k}. The root is the full class
// set, leaves are singletons and the children of every node partition it.
class Hierarchy {
  public:
    struct Node {
        std::vector<int> members;  // ascending
        int parent = -1;           // index into nodes(), -1 for the root
        std::vector<int> children;
    };

    // Builds a hierarchy from internal nodes given as (id, parent_id,
    // members); parent_id 0 marks the root. Leaves are created implicitly
    // for classes not covered by any listed child.
    static Hierarchy from_internal_nodes(
        int k, const std::vector<std::tuple<int, int, std::vector<int>>>& internal) {
        Hierarchy h;
        h.k_ = k;
        std::map<int, int> id_to_idx;
        int root_id = -1;
        for (const auto& [id, parent_id, members] : internal) {
            if (id_to_idx.count(id)) throw DataError("hierarchy: duplicate node id " + std::to_string(id));
            Node node;
            node.members = members;
            std::sort(node.members.begin(), node.members.end());
            if (node.members.empty()) throw DataError("hierarchy: empty node " + std::to_string(id));
            for (int c : node.members)
                if (c < 1 || c > k) throw DataError("hierarchy: class out of range in node " + std::to_string(id));
            if (std::adjacent_find(node.members.begin(), node.members.end()) != node.members.end())
                throw DataError("hierarchy: duplicate member in node " + std::to_string(id));
            id_to_idx[id] = static_cast<int>(h.nodes_.size());
            h.nodes_.push_back(std::move(node));
            if (parent_id == 0) {
                if (root_id != -1) throw DataError("hierarchy: multiple roots");
                root_id = id;
            }
        }
        if (root_id == -1) throw DataError("hierarchy: missing root (parent_id 0)");
        h.root_ = id_to_idx[root_id];
        if (static_cast<int>(h.nodes_[static_cast<std::size_t>(h.root_)].members.size()) != k)
            throw DataError("hierarchy: root must contain every class");
        for (const auto& [id, parent_id, members] : internal) {
            (void)members;
            if (parent_id == 0) continue;
            if (!id_to_idx.count(parent_id))
                throw DataError("hierarchy: unknown parent " + std::to_string(parent_id));
            int idx = id_to_idx[id];
            int pidx = id_to_idx[parent_id];
            h.nodes_[static_cast<std::size_t>(idx)].parent = pidx;
            h.nodes_[static_cast<std::size_t>(pidx)].children.push_back(idx);
        }

        // Attach an implicit leaf for every class under its deepest
        // containing node, then check the partition invariant.
        h.leaf_of_.assign(static_cast<std::size_t>(k) + 1, -1);
        for (int c = 1; c <= k; ++c) {
            int best = h.root_;
            std::size_t best_size = h.nodes_[static_cast<std::size_t>(h.root_)].members.size();
            for (std::size_t i = 0; i < h.nodes_.size(); ++i) {
                const auto& m = h.nodes_[i].members;
                if (std::binary_search(m.begin(), m.end(), c) && m.size() < best_size) {
                    best = static_cast<int>(i);
                    best_size = m.size();
                }
            }
            if (best_size == 1) {
                h.leaf_of_[static_cast<std::size_t>(c)] = best;
            } else {
                Node leaf;
                leaf.members = {c};
                leaf.parent = best;
                int idx = static_cast<int>(h.nodes_.size());
                h.nodes_.push_back(std::move(leaf));
                h.nodes_[static_cast<std::size_t>(best)].children.push_back(idx);
                h.leaf_of_[static_cast<std::size_t>(c)] = idx;
            }
        }
        h.validate_();
        return h;
    }

    // One line per internal node: `node_id parent_id member,member,...`,
    // root marked by parent_id 0.
    static Hierarchy load(const std::string& path, int k) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open hierarchy file: " + path);
        std::vector<std::tuple<int, int, std::vector<int>>> internal;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::istringstream ss(line);
            int id, parent;
            std::string members_field;
            if (!(ss >> id >> parent >> members_field)) {
                if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
                throw DataError("hierarchy: malformed line " + std::to_string(line_no));
            }
            std::vector<int> members;
            std::istringstream ms(members_field);
            std::string tok;
            while (std::getline(ms, tok, ',')) members.push_back(std::stoi(tok));
            internal.emplace_back(id, parent, std::move(members));
        }
        return from_internal_nodes(k, internal);
    }

    // Flat hierarchy: root plus one leaf per class.
    static Hierarchy flat(int k) {
        std::vector<int> all(static_cast<std::size_t>(k));
        for (int c = 1; c <= k; ++c) all[static_cast<std::size_t>(c - 1)] = c;
        return from_internal_nodes(k, {{1, 0, all}});
    }

    int k() const { return k_; }
    int root() const { return root_; }
    std::size_t n_nodes() const { return nodes_.size(); }
    const Node& node(int idx) const { return nodes_[static_cast<std::size_t>(idx)]; }
    int leaf_of(int cls) const { return leaf_of_[static_cast<std::size_t>(cls)]; }
    int parent(int idx) const { return nodes_[static_cast<std::size_t>(idx)].parent; }
    const std::vector<int>& members(int idx) const { return nodes_[static_cast<std::size_t>(idx)].members; }

    // Node labels on the path root -> leaf(cls), excluding the root.
    std::vector<int> path_from_root(int cls) const {
        std::vector<int> path;
        for (int n = leaf_of(cls); n != root_; n = parent(n)) path.push_back(n);
        std::reverse(path.begin(), path.end());
        return path;
    }

    int depth() const {
        int d = 0;
        for (int c = 1; c <= k_; ++c)
            d = std::max(d, static_cast<int>(path_from_root(c).size()) + 1);
        return d;
    }

  private:
    void validate_() const {
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const Node& n = nodes_[i];
            if (n.children.empty()) {
                if (n.members.size() != 1) throw DataError("hierarchy: non-singleton leaf");
                continue;
            }
            std::vector<int> u;
            for (int ch : n.children) {
                const auto& m = nodes_[static_cast<std::size_t>(ch)].members;
                u.insert(u.end(), m.begin(), m.end());
            }
            std::sort(u.begin(), u.end());
            if (u != n.members) throw DataError("hierarchy: children do not partition their parent");
        }
    }

    int k_ = 0;
    int root_ = -1;
    std::vector<Node> nodes_;
    std::vector<int> leaf_of_;
};

// ---------------------------------------------------------------------------
// Cluster maps
// ---------------------------------------------------------------------------

struct ClusterMap {
    std::map<int, int> cluster_of;       // class -> cluster id in [0, m)
    std::vector<std::vector<int>> members;  // cluster id -> ascending classes

    int m() const { return static_cast<int>(members.size()); }

    int cluster(int cls) const {
        auto it = cluster_of.find(cls);
        if (it == cluster_of.end()) throw DataError("cluster map: class without cluster");
        return it->second;
    }

    static ClusterMap from_assignments(const std::vector<int>& classes, const std::vector<int>& ids) {
        ClusterMap map;
        int m = 0;
        for (int id : ids) m = std::max(m, id + 1);
        map.members.resize(static_cast<std::size_t>(m));
        for (std::size_t i = 0; i < classes.size(); ++i) {
            map.cluster_of[classes[i]] = ids[i];
            map.members[static_cast<std::size_t>(ids[i])].push_back(classes[i]);
        }
        for (auto& v : map.members) std::sort(v.begin(), v.end());
        return map;
    }
};

// ---------------------------------------------------------------------------
// Quantile embeddings and k-means
// ---------------------------------------------------------------------------

struct QuantileEmbedding {
    std::vector<double> values;  // nondecreasing in the level
};

inline std::map<int, QuantileEmbedding> quantile_embed(
    const std::map<int, std::vector<double>>& per_class_scores, const std::vector<double>& levels) {
    for (double l : levels)
        if (l <= 0.0 || l > 1.0) throw ConfigError("quantile_embed: levels must lie in (0, 1]");
    std::map<int, QuantileEmbedding> out;
    for (const auto& [cls, scores] : per_class_scores) {
        if (scores.empty()) throw DataError("quantile_embed: empty class " + std::to_string(cls));
        QuantileEmbedding e;
        e.values.reserve(levels.size());
        std::vector<double> sorted = scores;
        std::sort(sorted.begin(), sorted.end());
        for (double l : levels) e.values.push_back(sorted_quantile(sorted, l));
        out.emplace(cls, std::move(e));
    }
    return out;
}

// Lloyd's iterations from k-means++-style seeded centers. Deterministic
// under the seed; assignment ties go to the lowest center index.
inline std::vector<int> kmeans(const std::vector<std::vector<double>>& points, int m, SeededRng& rng,
                               int max_iter = 100, double tol = 1e-9) {
    if (m < 1) throw ConfigError("kmeans: m must be at least 1");
    if (static_cast<std::size_t>(m) > points.size()) throw DataError("kmeans: more clusters than points");
    std::size_t n = points.size();
    std::size_t dim = points[0].size();

    auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t j = 0; j < dim; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
        return s;
    };

    std::vector<std::vector<double>> centers;
    centers.push_back(points[rng.uniform_index(n)]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < m) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = dist2(points[i], centers[0]);
            for (std::size_t c = 1; c < centers.size(); ++c)
                best = std::min(best, dist2(points[i], centers[c]));
            d2[i] = best;
            total += best;
        }
        if (total <= 0.0) {
            // All remaining points coincide with a center; fall back to the
            // first unused point.
            std::size_t pick = centers.size() % n;
            centers.push_back(points[pick]);
            continue;
        }
        double target = rng.uniform() * total;
        std::size_t chosen = n - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += d2[i];
            if (acc >= target) {
                chosen = i;
                break;
            }
        }
        centers.push_back(points[chosen]);
    }

    std::vector<int> assign(n, 0);
    for (int it = 0; it < max_iter; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = dist2(points[i], centers[0]);
            for (int c = 1; c < m; ++c) {
                double d = dist2(points[i], centers[static_cast<std::size_t>(c)]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            assign[i] = best;
        }
        std::vector<std::vector<double>> next(static_cast<std::size_t>(m), std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(static_cast<std::size_t>(m), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& c = next[static_cast<std::size_t>(assign[i])];
            for (std::size_t j = 0; j < dim; ++j) c[j] += points[i][j];
            ++counts[static_cast<std::size_t>(assign[i])];
        }
        for (int c = 0; c < m; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) {
                // Reseed an empty cluster at the point farthest from its center.
                std::size_t far = 0;
                double fd = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    double d = dist2(points[i], centers[static_cast<std::size_t>(assign[i])]);
                    if (d > fd) {
                        fd = d;
                        far = i;
                    }
                }
                next[static_cast<std::size_t>(c)] = points[far];
                counts[static_cast<std::size_t>(c)] = 1;
                assign[far] = c;
            } else {
                for (std::size_t j = 0; j < dim; ++j)
                    next[static_cast<std::size_t>(c)][j] /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
            }
        }
        double shift = 0.0;
        for (int c = 0; c < m; ++c) shift += dist2(centers[static_cast<std::size_t>(c)], next[static_cast<std::size_t>(c)]);
        centers = std::move(next);
        if (shift < tol) break;
    }
    return assign;
}

// Three-band clustering: classes below min_obs fall into one rest cluster,
// classes with at least size_threshold observations stay singletons, and the
// middle band is k-means-grouped on its quantile embeddings.
inline ClusterMap composite_cluster(const std::map<int, std::size_t>& per_class_counts,
                                    const std::map<int, std::vector<double>>& per_class_scores,
                                    const std::vector<double>& levels, std::size_t size_threshold,
                                    std::size_t min_obs, int m, SeededRng& rng) {
    std::vector<int> rest, mid, big;
    for (const auto& [cls, count] : per_class_counts) {
        if (count < min_obs)
            rest.push_back(cls);
        else if (count < size_threshold)
            mid.push_back(cls);
        else
            big.push_back(cls);
    }

    ClusterMap map;
    auto add_cluster = [&map](const std::vector<int>& classes) {
        int id = map.m();
        map.members.emplace_back(classes);
        std::sort(map.members.back().begin(), map.members.back().end());
        for (int c : classes) map.cluster_of[c] = id;
    };

    for (int c : big) add_cluster({c});
    if (!mid.empty()) {
        std::map<int, std::vector<double>> mid_scores;
        for (int c : mid) {
            auto it = per_class_scores.find(c);
            if (it == per_class_scores.end())
                throw DataError("composite_cluster: missing scores for class " + std::to_string(c));
            mid_scores[c] = it->second;
        }
        auto embeddings = quantile_embed(mid_scores, levels);
        std::vector<std::vector<double>> points;
        points.reserve(mid.size());
        for (int c : mid) points.push_back(embeddings.at(c).values);
        int m_eff = std::min<int>(m, static_cast<int>(mid.size()));
        auto assign = kmeans(points, m_eff, rng);
        for (int g = 0; g < m_eff; ++g) {
            std::vector<int> group;
            for (std::size_t i = 0; i < mid.size(); ++i)
                if (assign[i] == g) group.push_back(mid[i]);
            if (!group.empty()) add_cluster(group);
        }
    }
    if (!rest.empty()) add_cluster(rest);
    return map;
}

// Size thresholding over a hierarchy: each uncovered class climbs from its
// leaf until the subtree count reaches the threshold (or the root), and the
// chosen node absorbs any previously formed clusters it contains. Classes
// are processed in ascending index order, so the result is a partition of
// {1..k} by hierarchy nodes.
inline ClusterMap size_threshold_cluster(const Hierarchy& hier,
                                         const std::map<int, std::size_t>& per_class_counts,
                                         std::size_t size_threshold) {
    auto node_count = [&](int node) {
        std::size_t total = 0;
        for (int c : hier.members(node)) {
            auto it = per_class_counts.find(c);
            if (it != per_class_counts.end()) total += it->second;
        }
        return total;
    };

    std::vector<int> chosen_nodes;
    std::set<int> covered;
    for (int c = 1; c <= hier.k(); ++c) {
        if (covered.count(c)) continue;
        int node = hier.leaf_of(c);
        while (node_count(node) < size_threshold && node != hier.root()) node = hier.parent(node);
        const auto& mem = hier.members(node);
        // Absorb previously chosen nodes whose members lie inside this one.
        chosen_nodes.erase(std::remove_if(chosen_nodes.begin(), chosen_nodes.end(),
                                          [&](int prev) {
                                              const auto& pm = hier.members(prev);
                                              return std::includes(mem.begin(), mem.end(), pm.begin(),
                                                                   pm.end());
                                          }),
                           chosen_nodes.end());
        chosen_nodes.push_back(node);
        for (int cc : mem) covered.insert(cc);
    }

    ClusterMap map;
    for (int node : chosen_nodes) {
        int id = map.m();
        map.members.push_back(hier.members(node));
        for (int cc : hier.members(node)) map.cluster_of[cc] = id;
    }
    return map;
}

// ---------------------------------------------------------------------------
// Representation complexity
// ---------------------------------------------------------------------------

// Minimal size of a disjoint cover of the label set by hierarchy nodes.
// Top-down closed form: a node is counted iff it lies inside the set and its
// parent does not; exact on trees.
inline int representation_complexity(const Hierarchy& hier, const std::vector<int>& label_set) {
    if (label_set.empty()) return 0;
    std::vector<int> sorted = label_set;
    std::sort(sorted.begin(), sorted.end());
    auto inside = [&](int node) {
        const auto& m = hier.members(node);
        return std::includes(sorted.begin(), sorted.end(), m.begin(), m.end());
    };
    int count = 0;
    for (std::size_t i = 0; i < hier.n_nodes(); ++i) {
        int node = static_cast<int>(i);
        if (!inside(node)) continue;
        int parent = hier.parent(node);
        if (parent == -1 || !inside(parent)) ++count;
    }
    return count;
}

// Greedy search over nodes ordered by descending cardinality; agrees with
// the closed form on trees.
inline int representation_complexity_greedy(const Hierarchy& hier, const std::vector<int>& label_set) {
    if (label_set.empty()) return 0;
    std::vector<int> sorted = label_set;
    std::sort(sorted.begin(), sorted.end());
    auto intersects = [&](int node) {
        for (int c : hier.members(node))
            if (std::binary_search(sorted.begin(), sorted.end(), c)) return true;
        return false;
    };
    auto inside = [&](int node) {
        const auto& m = hier.members(node);
        return std::includes(sorted.begin(), sorted.end(), m.begin(), m.end());
    };

    // Priority queue keyed by (cardinality desc, node index asc).
    auto cmp = [&](int a, int b) {
        std::size_t ca = hier.members(a).size(), cb = hier.members(b).size();
        if (ca != cb) return ca > cb;
        return a < b;
    };
    std::vector<int> queue{hier.root()};
    std::set<int> covered;
    int count = 0;
    while (covered.size() < sorted.size()) {
        if (queue.empty()) throw NumericError("representation_complexity: cover not found");
        std::sort(queue.begin(), queue.end(), cmp);
        int node = queue.front();
        queue.erase(queue.begin());
        if (inside(node)) {
            ++count;
            for (int c : hier.members(node)) covered.insert(c);
        } else if (intersects(node)) {
            for (int ch : hier.node(node).children) queue.push_back(ch);
        }
    }
    return count;
}

// ---------------------------------------------------------------------------
// Clusterwise calibration
// ---------------------------------------------------------------------------

// Pools scores over each cluster. Reduces to a Mondrian fit for singleton
// clusters and to marginal calibration for a single cluster.
class ClusterCalibration {
  public:
    ClusterCalibration(const ClusterMap& map, const std::vector<double>& scores,
                       const std::vector<int>& classes, double alpha, bool strict_mode = true)
        : map_(map), alpha_(alpha) {
        if (scores.size() != classes.size())
            throw DataError("cluster calibration: scores/classes length mismatch");
        std::vector<std::vector<double>> buckets(static_cast<std::size_t>(map.m()));
        for (std::size_t i = 0; i < scores.size(); ++i)
            buckets[static_cast<std::size_t>(map.cluster(classes[i]))].push_back(scores[i]);
        for (auto& b : buckets) per_cluster_.emplace_back(std::move(b), alpha, strict_mode);
    }

    double alpha() const { return alpha_; }
    const ClusterMap& map() const { return map_; }

    double critical_score(int cls) const {
        const Calibration& cal = per_cluster_[static_cast<std::size_t>(map_.cluster(cls))];
        if (cal.size() == 0) return kInf;
        return cal.critical_score();
    }

  private:
    ClusterMap map_;
    double alpha_;
    std::vector<Calibration> per_cluster_;
};

inline ConformalBand cluster_predict_band(const RegressionOutputs& out, int cls,
                                          const ClusterCalibration& ccal, BandKind kind) {
    double a_star = ccal.critical_score(cls);
    switch (kind) {
        case BandKind::Point:
            return band_point(*out.point, a_star, ccal.alpha());
        case BandKind::Normalized:
            return band_normalized(*out.point, *out.spread, a_star, ccal.alpha());
        case BandKind::Interval:
            return band_interval(*out.lower, *out.upper, a_star, ccal.alpha());
    }
    throw ConfigError("cluster_predict_band: unknown band kind");
}

// Label-conditional set prediction: each candidate label is thresholded at
// its own cluster's critical score.
inline PredictionSet cluster_predict_set(const std::vector<double>& per_label_scores,
                                         const ClusterCalibration& ccal) {
    PredictionSet set;
    set.alpha = ccal.alpha();
    for (std::size_t i = 0; i < per_label_scores.size(); ++i) {
        int label = static_cast<int>(i + 1);
        if (per_label_scores[i] <= ccal.critical_score(label)) set.labels.push_back(label);
    }
    return set;
}

// ---------------------------------------------------------------------------
// Similarity-based calibration
// ---------------------------------------------------------------------------

// Retains the calibration rows whose target similarity to the query reaches
// the top_k-th greatest similarity among distinct targets; ties at the
// threshold are all included.
inline std::vector<double> similarity_calibration(const std::vector<double>& cal_scores,
                                                  const std::vector<int>& cal_targets,
                                                  const std::function<double(int)>& similarity,
                                                  std::size_t top_k) {
    if (cal_scores.empty()) throw DataError("similarity_calibration: empty calibration");
    if (cal_scores.size() != cal_targets.size())
        throw DataError("similarity_calibration: scores/targets length mismatch");
    std::map<int, double> sims;
    for (int t : cal_targets)
        if (!sims.count(t)) sims[t] = similarity(t);
    if (top_k < 1 || top_k > sims.size())
        throw ConfigError("similarity_calibration: top_k must lie in [1, distinct targets]");
    std::vector<double> values;
    values.reserve(sims.size());
    for (const auto& [t, s] : sims) values.push_back(s);
    std::sort(values.begin(), values.end(), std::greater<>());
    double threshold = values[top_k - 1];
    std::vector<double> kept;
    for (std::size_t i = 0; i < cal_scores.size(); ++i)
        if (sims.at(cal_targets[i]) >= threshold) kept.push_back(cal_scores[i]);
    return kept;
}

// Metric on padded hierarchy paths (levels 1..d-1); shorter paths are padded
// with a sentinel distinct from every node label.
inline double frechet_distance(const std::vector<int>& path_a, const std::vector<int>& path_b,
                               int depth) {
    constexpr int kPad = std::numeric_limits<int>::min();
    double total = 0.0;
    double scale = 0.5;
    for (int i = 0; i < depth - 1; ++i) {
        int a = i < static_cast<int>(path_a.size()) ? path_a[static_cast<std::size_t>(i)] : kPad;
        int b = i < static_cast<int>(path_b.size()) ? path_b[static_cast<std::size_t>(i)] : kPad;
        // Discrete metric; both-padded levels are equal.
        double rho = (a == b) ? 0.0 : 1.0;
        total += scale * rho / (1.0 + rho);
        scale *= 0.5;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Statistical distances
// ---------------------------------------------------------------------------

// Two-sample Kolmogorov-Smirnov distance between empirical CDFs.
inline double ks_distance(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw DataError("ks_distance: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double na = static_cast<double>(a.size());
    double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

// KS distance between CDF functions evaluated on a grid.
inline double ks_distance_grid(const std::function<double(double)>& F,
                               const std::function<double(double)>& G,
                               const std::vector<double>& grid) {
    double d = 0.0;
    for (double x : grid) d = std::max(d, std::abs(F(x) - G(x)));
    return d;
}

// One-sample KS distance of a sample against a uniform [0, 1] law.
inline double ks_uniform(std::vector<double> samples) {
    if (samples.empty()) throw DataError("ks_uniform: empty sample");
    std::sort(samples.begin(), samples.end());
    double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double fi = static_cast<double>(i) / n;
        double fi1 = static_cast<double>(i + 1) / n;
        d = std::max(d, std::max(fi1 - samples[i], samples[i] - fi));
    }
    return d;
}

struct TvResult {
    double value = 0.0;
    double error_estimate = 0.0;
};

// Scheffe integral (1/2) int |f - g| by composite Simpson on a uniform grid
// over [lo, hi]; the error estimate is the Richardson difference against the
// half-resolution rule.
inline TvResult tv_distance_numeric(const std::function<double(double)>& f,
                                    const std::function<double(double)>& g, double lo, double hi,
                                    std::size_t n_intervals) {
    if (!(hi > lo)) throw ConfigError("tv_distance_numeric: empty support");
    if (n_intervals < 4) n_intervals = 4;
    if (n_intervals % 2 != 0) ++n_intervals;
    double h = (hi - lo) / static_cast<double>(n_intervals);
    auto diff = [&](double x) {
        double fx = f(x);
        double gx = g(x);
        if (!std::isfinite(fx) || !std::isfinite(gx))
            throw NumericError("tv_distance_numeric: non-finite density value");
        return std::abs(fx - gx);
    };
    double sum = diff(lo) + diff(hi);
    double coarse = diff(lo) + diff(hi);
    for (std::size_t i = 1; i < n_intervals; ++i) {
        double x = lo + h * static_cast<double>(i);
        double v = diff(x);
        sum += (i % 2 == 1) ? 4.0 * v : 2.0 * v;
        if (i % 2 == 0) coarse += (i % 4 == 2) ? 4.0 * v : 2.0 * v;
    }
    double fine_value = 0.5 * sum * h / 3.0;
    double coarse_value = 0.5 * coarse * (2.0 * h) / 3.0;
    return {fine_value, std::abs(fine_value - coarse_value) / 15.0};
}

// Closed-form total variation distance between U[a, a+w] and U[a2, a2+w2].
inline double tv_uniform(double a, double w, double a2, double w2) {
    if (w <= 0.0 || w2 <= 0.0) throw DataError("tv_uniform: widths must be positive");
    if (a > a2) {
        std::swap(a, a2);
        std::swap(w, w2);
    }
    if (a2 - a >= w) return 1.0;
    if (a + w >= a2 + w2) return (w - w2) / w;
    if (w2 >= w) return ((a2 - a) + (w2 - w)) / w2;
    return (a2 - a) / w;
}

// ---------------------------------------------------------------------------
// Coverage bounds
// ---------------------------------------------------------------------------

// Worst-case clusterwise coverage 1 - alpha - max KS distance between the
// target class and the other cluster members, floored at 0.
inline double clusterwise_bound(const std::map<int, std::vector<double>>& cluster_scores, int target,
                                double alpha) {
    if (cluster_scores.empty()) throw DataError("clusterwise_bound: empty cluster");
    auto it = cluster_scores.find(target);
    if (it == cluster_scores.end()) throw DataError("clusterwise_bound: target class not in cluster");
    double max_ks = 0.0;
    for (const auto& [cls, scores] : cluster_scores) {
        if (cls == target) continue;
        max_ks = std::max(max_ks, ks_distance(it->second, scores));
    }
    return std::max(0.0, 1.0 - alpha - max_ks);
}

inline double clusterwise_bound_grid(const std::map<int, std::function<double(double)>>& cdfs,
                                     int target, double alpha, const std::vector<double>& grid) {
    auto it = cdfs.find(target);
    if (it == cdfs.end()) throw DataError("clusterwise_bound: target class not in cluster");
    double max_ks = 0.0;
    for (const auto& [cls, F] : cdfs) {
        if (cls == target) continue;
        max_ks = std::max(max_ks, ks_distance_grid(it->second, F, grid));
    }
    return std::max(0.0, 1.0 - alpha - max_ks);
}

// Mixture lower bound (1 - alpha) / lambda_c - sum_{c' != c} lambda_c' / lambda_c.
inline double mixture_bound(const std::map<int, double>& weights, int target, double alpha) {
    auto it = weights.find(target);
    if (it == weights.end() || it->second == 0.0)
        throw DataError("mixture_bound: target class has zero weight");
    double others = 0.0;
    for (const auto& [cls, w] : weights)
        if (cls != target) others += w;
    return (1.0 - alpha) / it->second - others / it->second;
}

// Mixture of per-class score distributions.
struct MixtureSpec {
    std::map<int, double> weights;                       // sum to 1
    std::map<int, std::function<double(double)>> cdfs;   // per-class CDF
    double support_lo = 0.0;
    double support_hi = 1.0;

    void validate() const {
        double sum = 0.0;
        for (const auto& [cls, w] : weights) {
            if (w < 0.0) throw DataError("mixture: weights must be nonnegative");
            if (!cdfs.count(cls)) throw DataError("mixture: missing CDF for class " + std::to_string(cls));
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw DataError("mixture: weights must sum to 1");
    }

    double cdf(double a) const {
        double v = 0.0;
        for (const auto& [cls, w] : weights) v += w * cdfs.at(cls)(a);
        return v;
    }
};

// Asymptotic clusterwise coverage P_{A|c}(A <= Q_A(1 - alpha)) with the
// mixture quantile found by bisection. Requires the mixture CDF to be
// strictly increasing at the critical quantile.
inline double quantile_matched_coverage(const MixtureSpec& mix, int target, double alpha) {
    mix.validate();
    if (!mix.cdfs.count(target)) throw DataError("quantile_matched_coverage: unknown class");
    double level = 1.0 - alpha;
    double lo = mix.support_lo, hi = mix.support_hi;
    // Expand the bracket if the support hints are too tight.
    for (int i = 0; i < 200 && mix.cdf(lo) > level; ++i) lo -= std::max(1.0, hi - lo);
    for (int i = 0; i < 200 && mix.cdf(hi) < level; ++i) hi += std::max(1.0, hi - lo);
    for (int it = 0; it < 200 && hi - lo > 1e-12 * std::max(1.0, std::abs(hi) + std::abs(lo)); ++it) {
        double mid = 0.5 * (lo + hi);
        (mix.cdf(mid) < level ? lo : hi) = mid;
    }
    double q = 0.5 * (lo + hi);
    // The mixture CDF must be strictly increasing on both sides of the
    // critical quantile (a one-sided plateau makes it non-unique). A probe
    // step of delta should see a CDF increase of about density * delta, so
    // anything below 1e-3 * delta counts as a vanishing density.
    double delta = 1e-6 * std::max(1.0, std::abs(q));
    if (mix.cdf(q + delta) - mix.cdf(q) < 1e-3 * delta ||
        mix.cdf(q) - mix.cdf(q - delta) < 1e-3 * delta)
        throw NumericError("quantile_matched_coverage: quantile not unique");
    return mix.cdfs.at(target)(q);
}

}  // namespace conformal
