#pragma once

// Boykov-Kolmogorov augmenting-path max-flow and a pseudo-boolean energy
// builder on top of it. Nodes in the sink segment take label 1.

#include <algorithm>
#include <cassert>
#include <deque>
#include <limits>
#include <vector>

#include "mutseg/core.hpp"

namespace mutseg {

class MaxFlowGraph {
public:
    explicit MaxFlowGraph(int node_count, std::size_t edge_hint = 0) : nodes_(static_cast<std::size_t>(node_count)) {
        arcs_.reserve(2 * edge_hint);
    }

    int node_count() const noexcept { return static_cast<int>(nodes_.size()); }

    /// Adds capacities to the source->i and i->sink links.
    void add_terminal_weights(int i, double cap_source, double cap_sink) {
        // fold the existing residual back in before splitting off the shared part
        const double r = nodes_[i].tr_cap;
        if (r > 0)
            cap_source += r;
        else
            cap_sink -= r;
        flow_ += std::min(cap_source, cap_sink);
        nodes_[i].tr_cap = cap_source - cap_sink;
    }

    /// Adds edge i->j with capacity `cap` and j->i with `rev_cap`.
    void add_edge(int i, int j, double cap, double rev_cap) {
        assert(i != j && cap >= 0 && rev_cap >= 0);
        const int a = static_cast<int>(arcs_.size());
        arcs_.push_back({j, nodes_[i].first, cap});
        arcs_.push_back({i, nodes_[j].first, rev_cap});
        nodes_[i].first = a;
        nodes_[j].first = a + 1;
    }

    double maxflow() {
        init_trees();
        int current = -1;
        while (true) {
            int i = current;
            if (i >= 0 && nodes_[i].parent == kNone)
                i = -1;
            if (i < 0) {
                i = next_active();
                if (i < 0)
                    break;
            }

            const int bridge = find_bridge(i);
            ++time_;
            if (bridge >= 0) {
                current = i;
                augment(bridge);
                adopt_orphans();
            } else {
                current = -1;
            }
        }
        return flow_;
    }

    /// True when node i ends in the sink segment (label 1).
    bool in_sink_segment(int i) const noexcept { return nodes_[i].parent != kNone && nodes_[i].is_sink; }

private:
    static constexpr int kNone = -1;
    static constexpr int kTerminal = -2;
    static constexpr int kOrphan = -3;

    struct Node {
        int first = -1;
        int parent = kNone;
        long timestamp = 0;
        int dist = 0;
        bool is_sink = false;
        bool active = false;
        double tr_cap = 0.0;
    };
    struct Arc {
        int head;
        int next;
        double r_cap;
    };

    static int sister(int a) noexcept { return a ^ 1; }
    int tail(int a) const noexcept { return arcs_[sister(a)].head; }

    void set_active(int i) {
        if (!nodes_[i].active) {
            nodes_[i].active = true;
            active_.push_back(i);
        }
    }

    int next_active() {
        while (!active_.empty()) {
            const int i = active_.front();
            active_.pop_front();
            nodes_[i].active = false;
            if (nodes_[i].parent != kNone)
                return i;
        }
        return -1;
    }

    void init_trees() {
        active_.clear();
        orphans_.clear();
        time_ = 0;
        for (int i = 0; i < node_count(); ++i) {
            Node& n = nodes_[i];
            n.active = false;
            n.timestamp = 0;
            if (n.tr_cap > 0) {
                n.is_sink = false;
                n.parent = kTerminal;
                n.dist = 1;
                set_active(i);
            } else if (n.tr_cap < 0) {
                n.is_sink = true;
                n.parent = kTerminal;
                n.dist = 1;
                set_active(i);
            } else {
                n.parent = kNone;
            }
        }
    }

    // Grows the tree containing i by one layer; returns an arc oriented from
    // the source tree to the sink tree when the trees touch.
    int find_bridge(int i) {
        Node& ni = nodes_[i];
        for (int a = ni.first; a >= 0; a = arcs_[a].next) {
            const bool has_cap = ni.is_sink ? arcs_[sister(a)].r_cap > 0 : arcs_[a].r_cap > 0;
            if (!has_cap)
                continue;
            const int j = arcs_[a].head;
            Node& nj = nodes_[j];
            if (nj.parent == kNone) {
                nj.is_sink = ni.is_sink;
                nj.parent = sister(a);
                nj.timestamp = ni.timestamp;
                nj.dist = ni.dist + 1;
                set_active(j);
            } else if (nj.is_sink != ni.is_sink) {
                return ni.is_sink ? sister(a) : a;
            } else if (nj.timestamp <= ni.timestamp && nj.dist > ni.dist) {
                nj.parent = sister(a);
                nj.timestamp = ni.timestamp;
                nj.dist = ni.dist + 1;
            }
        }
        return -1;
    }

    void augment(int bridge) {
        double bottleneck = arcs_[bridge].r_cap;
        int i = tail(bridge);
        for (int a; (a = nodes_[i].parent) != kTerminal; i = arcs_[a].head)
            bottleneck = std::min(bottleneck, arcs_[sister(a)].r_cap);
        bottleneck = std::min(bottleneck, nodes_[i].tr_cap);
        i = arcs_[bridge].head;
        for (int a; (a = nodes_[i].parent) != kTerminal; i = arcs_[a].head)
            bottleneck = std::min(bottleneck, arcs_[a].r_cap);
        bottleneck = std::min(bottleneck, -nodes_[i].tr_cap);

        arcs_[bridge].r_cap -= bottleneck;
        arcs_[sister(bridge)].r_cap += bottleneck;

        i = tail(bridge);
        for (int a; (a = nodes_[i].parent) != kTerminal;) {
            arcs_[a].r_cap += bottleneck;
            arcs_[sister(a)].r_cap -= bottleneck;
            if (arcs_[sister(a)].r_cap <= 0)
                make_orphan(i);
            i = arcs_[a].head;
        }
        nodes_[i].tr_cap -= bottleneck;
        if (nodes_[i].tr_cap <= 0)
            make_orphan(i);

        i = arcs_[bridge].head;
        for (int a; (a = nodes_[i].parent) != kTerminal;) {
            arcs_[sister(a)].r_cap += bottleneck;
            arcs_[a].r_cap -= bottleneck;
            if (arcs_[a].r_cap <= 0)
                make_orphan(i);
            i = arcs_[a].head;
        }
        nodes_[i].tr_cap += bottleneck;
        if (nodes_[i].tr_cap >= 0)
            make_orphan(i);

        flow_ += bottleneck;
    }

    void make_orphan(int i) {
        nodes_[i].parent = kOrphan;
        orphans_.push_back(i);
    }

    void adopt_orphans() {
        while (!orphans_.empty()) {
            const int i = orphans_.front();
            orphans_.pop_front();
            adopt(i);
        }
    }

    void adopt(int i) {
        Node& ni = nodes_[i];
        constexpr int kInfinite = std::numeric_limits<int>::max();
        int best_arc = -1;
        int best_dist = kInfinite;

        for (int a0 = ni.first; a0 >= 0; a0 = arcs_[a0].next) {
            const bool has_cap = ni.is_sink ? arcs_[a0].r_cap > 0 : arcs_[sister(a0)].r_cap > 0;
            if (!has_cap)
                continue;
            int j = arcs_[a0].head;
            if (nodes_[j].is_sink != ni.is_sink || nodes_[j].parent == kNone)
                continue;
            int d = 0;
            while (true) {
                Node& nj = nodes_[j];
                if (nj.timestamp == time_) {
                    d += nj.dist;
                    break;
                }
                const int a = nj.parent;
                ++d;
                if (a == kTerminal) {
                    nj.timestamp = time_;
                    nj.dist = 1;
                    break;
                }
                if (a == kOrphan) {
                    d = kInfinite;
                    break;
                }
                j = arcs_[a].head;
            }
            if (d == kInfinite)
                continue;
            if (d < best_dist) {
                best_arc = a0;
                best_dist = d;
            }
            for (j = arcs_[a0].head; nodes_[j].timestamp != time_; j = arcs_[nodes_[j].parent].head) {
                nodes_[j].timestamp = time_;
                nodes_[j].dist = d--;
            }
        }

        if (best_arc >= 0) {
            ni.parent = best_arc;
            ni.timestamp = time_;
            ni.dist = best_dist + 1;
            return;
        }

        ni.parent = kNone;
        for (int a0 = ni.first; a0 >= 0; a0 = arcs_[a0].next) {
            const int j = arcs_[a0].head;
            Node& nj = nodes_[j];
            if (nj.is_sink != ni.is_sink || nj.parent == kNone)
                continue;
            const bool has_cap = ni.is_sink ? arcs_[a0].r_cap > 0 : arcs_[sister(a0)].r_cap > 0;
            if (has_cap)
                set_active(j);
            if (nj.parent != kTerminal && nj.parent != kOrphan && arcs_[nj.parent].head == i)
                make_orphan(j);
        }
    }

    std::vector<Node> nodes_;
    std::vector<Arc> arcs_;
    std::deque<int> active_;
    std::deque<int> orphans_;
    long time_ = 0;
    double flow_ = 0.0;
};

/// Quadratic pseudo-boolean energy E(x) = const + sum unary + sum pairwise,
/// minimized exactly by one cut when every pairwise term is submodular.
class BinaryEnergy {
public:
    explicit BinaryEnergy(int variable_count, std::size_t pairwise_hint = 0)
        : graph_(variable_count, pairwise_hint), labels_(static_cast<std::size_t>(variable_count), 0) {}

    int variable_count() const noexcept { return graph_.node_count(); }

    void add_constant(double c) noexcept { constant_ += c; }

    /// E(x_i = 0) += e0, E(x_i = 1) += e1.
    void add_unary(int i, double e0, double e1) { graph_.add_terminal_weights(i, e1, e0); }

    /// Adds a pairwise table; requires e00 + e11 <= e01 + e10 (up to rounding).
    void add_pairwise(int i, int j, double e00, double e01, double e10, double e11) {
        if (e00 + e11 > e01 + e10 + 1e-9 * (1.0 + std::abs(e01 + e10)))
            throw Error("non-submodular pairwise term");
        add_unary(i, e00, e11);
        double b = e01 - e00;
        double c = e10 - e11;
        if (b < 0) {
            add_unary(i, b, 0);
            add_unary(j, -b, 0);
            c += b;
            b = 0;
        } else if (c < 0) {
            add_unary(i, 0, c);
            add_unary(j, 0, -c);
            b += c;
            c = 0;
        }
        graph_.add_edge(i, j, std::max(b, 0.0), std::max(c, 0.0));
    }

    /// Returns the minimum energy; labels are available through label().
    double minimize() {
        const double cut = graph_.maxflow();
        for (int i = 0; i < variable_count(); ++i)
            labels_[static_cast<std::size_t>(i)] = graph_.in_sink_segment(i) ? 1 : 0;
        return constant_ + cut;
    }

    int label(int i) const noexcept { return labels_[static_cast<std::size_t>(i)]; }

private:
    MaxFlowGraph graph_;
    std::vector<int> labels_;
    double constant_ = 0.0;
};

}  // namespace mutseg
