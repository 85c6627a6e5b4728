#pragma once

// Boykov-Kolmogorov max-flow / min-cut for the binary labeling problems that
// arise on pixel grids: two search trees grown from the terminals, augment
// along the path where they meet, then re-adopt the orphans left behind.

#include <cassert>
#include <cstdint>
#include <deque>
#include <limits>
#include <type_traits>
#include <vector>

namespace soc {

template <typename Cap>
class MaxFlowGraph {
  static_assert(std::is_arithmetic_v<Cap>);

 public:
  enum class Segment { Source, Sink };

  explicit MaxFlowGraph(int node_count) : nodes_(std::size_t(node_count)) {}

  int node_count() const { return int(nodes_.size()); }

  /// Terminal capacities: source->i and i->sink. May be called repeatedly.
  void add_terminal(int i, Cap to_source_side, Cap to_sink_side) {
    // Only the difference matters for the cut; the common part is flow already pushed.
    Node& n = nodes_[std::size_t(i)];
    const Cap delta = std::min(to_source_side, to_sink_side);
    flow_ += delta;
    n.tr_cap += to_source_side - to_sink_side;
  }

  /// Edge i->j with capacity cap_ij and reverse capacity cap_ji.
  void add_edge(int i, int j, Cap cap_ij, Cap cap_ji) {
    assert(i != j);
    const int a = int(arcs_.size());
    arcs_.push_back(Arc{j, nodes_[std::size_t(i)].first, a + 1, cap_ij});
    nodes_[std::size_t(i)].first = a;
    arcs_.push_back(Arc{i, nodes_[std::size_t(j)].first, a, cap_ji});
    nodes_[std::size_t(j)].first = a + 1;
  }

  Cap maxflow() {
    init_trees();
    int current = -1;
    while (true) {
      int i = current;
      if (i >= 0) {
        Node& n = nodes_[std::size_t(i)];
        n.next_active = false;
        if (n.parent == kNone) i = -1;
      }
      if (i < 0) {
        i = next_active();
        if (i < 0) break;
      }

      // Grow the tree of i until it touches the other tree.
      int meet = -1;
      Node& ni = nodes_[std::size_t(i)];
      if (!ni.in_sink) {
        for (int a = ni.first; a >= 0; a = arcs_[std::size_t(a)].next) {
          if (arcs_[std::size_t(a)].r_cap <= 0) continue;
          const int j = arcs_[std::size_t(a)].head;
          Node& nj = nodes_[std::size_t(j)];
          if (nj.parent == kNone) {
            nj.in_sink = false;
            nj.parent = arcs_[std::size_t(a)].sister;
            nj.ts = ni.ts;
            nj.dist = ni.dist + 1;
            set_active(j);
          } else if (nj.in_sink) {
            meet = a;
            break;
          } else if (nj.ts <= ni.ts && nj.dist > ni.dist) {
            nj.parent = arcs_[std::size_t(a)].sister;
            nj.ts = ni.ts;
            nj.dist = ni.dist + 1;
          }
        }
      } else {
        for (int a = ni.first; a >= 0; a = arcs_[std::size_t(a)].next) {
          const int sis = arcs_[std::size_t(a)].sister;
          if (arcs_[std::size_t(sis)].r_cap <= 0) continue;
          const int j = arcs_[std::size_t(a)].head;
          Node& nj = nodes_[std::size_t(j)];
          if (nj.parent == kNone) {
            nj.in_sink = true;
            nj.parent = sis;
            nj.ts = ni.ts;
            nj.dist = ni.dist + 1;
            set_active(j);
          } else if (!nj.in_sink) {
            meet = sis;
            break;
          } else if (nj.ts <= ni.ts && nj.dist > ni.dist) {
            nj.parent = sis;
            nj.ts = ni.ts;
            nj.dist = ni.dist + 1;
          }
        }
      }

      ++time_;
      if (meet >= 0) {
        // i stays active: it may still have other paths to grow.
        nodes_[std::size_t(i)].next_active = true;
        current = i;
        augment(meet);
        adopt_orphans();
      } else {
        current = -1;
      }
    }
    return flow_;
  }

  /// Side of the minimum cut a node ends on after maxflow(). Free nodes report Source.
  Segment segment(int i) const {
    const Node& n = nodes_[std::size_t(i)];
    return (n.parent != kNone && n.in_sink) ? Segment::Sink : Segment::Source;
  }

  Cap flow() const { return flow_; }

 private:
  static constexpr int kNone = -3;
  static constexpr int kTerminal = -1;
  static constexpr int kOrphan = -2;

  struct Arc {
    int head;
    int next;
    int sister;
    Cap r_cap;
  };

  struct Node {
    int first = -1;
    int parent = kNone;  // arc to parent, kTerminal, kOrphan, or kNone (free)
    bool in_sink = false;
    bool next_active = false;  // queued in the active list
    Cap tr_cap = 0;            // > 0: residual from source, < 0: residual to sink
    long ts = 0;
    int dist = 0;
  };

  void set_active(int i) {
    Node& n = nodes_[std::size_t(i)];
    if (!n.next_active) {
      n.next_active = true;
      active_.push_back(i);
    }
  }

  int next_active() {
    while (!active_.empty()) {
      const int i = active_.front();
      active_.pop_front();
      Node& n = nodes_[std::size_t(i)];
      n.next_active = false;
      if (n.parent != kNone) return i;
    }
    return -1;
  }

  void init_trees() {
    active_.clear();
    orphans_.clear();
    time_ = 0;
    for (int i = 0; i < node_count(); ++i) {
      Node& n = nodes_[std::size_t(i)];
      n.next_active = false;
      n.ts = 0;
      if (n.tr_cap > 0) {
        n.in_sink = false;
        n.parent = kTerminal;
        n.dist = 1;
        set_active(i);
      } else if (n.tr_cap < 0) {
        n.in_sink = true;
        n.parent = kTerminal;
        n.dist = 1;
        set_active(i);
      } else {
        n.parent = kNone;
      }
    }
  }

  // `mid` is an arc from the source tree into the sink tree.
  void augment(int mid) {
    Cap bottleneck = arcs_[std::size_t(mid)].r_cap;
    // Source side: walk from the tail of mid up to the source.
    for (int i = arcs_[std::size_t(arcs_[std::size_t(mid)].sister)].head;;) {
      const Node& n = nodes_[std::size_t(i)];
      if (n.parent == kTerminal) {
        bottleneck = std::min(bottleneck, n.tr_cap);
        break;
      }
      const int a = arcs_[std::size_t(n.parent)].sister;  // arc parent -> i
      bottleneck = std::min(bottleneck, arcs_[std::size_t(a)].r_cap);
      i = arcs_[std::size_t(n.parent)].head;
    }
    for (int i = arcs_[std::size_t(mid)].head;;) {
      const Node& n = nodes_[std::size_t(i)];
      if (n.parent == kTerminal) {
        bottleneck = std::min(bottleneck, -n.tr_cap);
        break;
      }
      bottleneck = std::min(bottleneck, arcs_[std::size_t(n.parent)].r_cap);  // arc i -> parent
      i = arcs_[std::size_t(n.parent)].head;
    }

    arcs_[std::size_t(arcs_[std::size_t(mid)].sister)].r_cap += bottleneck;
    arcs_[std::size_t(mid)].r_cap -= bottleneck;
    for (int i = arcs_[std::size_t(arcs_[std::size_t(mid)].sister)].head;;) {
      Node& n = nodes_[std::size_t(i)];
      if (n.parent == kTerminal) {
        n.tr_cap -= bottleneck;
        if (n.tr_cap == 0) make_orphan(i);
        break;
      }
      const int a = arcs_[std::size_t(n.parent)].sister;
      arcs_[std::size_t(n.parent)].r_cap += bottleneck;
      arcs_[std::size_t(a)].r_cap -= bottleneck;
      const int next = arcs_[std::size_t(n.parent)].head;
      if (arcs_[std::size_t(a)].r_cap == 0) make_orphan(i);
      i = next;
    }
    for (int i = arcs_[std::size_t(mid)].head;;) {
      Node& n = nodes_[std::size_t(i)];
      if (n.parent == kTerminal) {
        n.tr_cap += bottleneck;
        if (n.tr_cap == 0) make_orphan(i);
        break;
      }
      const int a = n.parent;
      arcs_[std::size_t(arcs_[std::size_t(a)].sister)].r_cap += bottleneck;
      arcs_[std::size_t(a)].r_cap -= bottleneck;
      const int next = arcs_[std::size_t(a)].head;
      if (arcs_[std::size_t(a)].r_cap == 0) make_orphan(i);
      i = next;
    }
    flow_ += bottleneck;
  }

  void make_orphan(int i) {
    nodes_[std::size_t(i)].parent = kOrphan;
    orphans_.push_back(i);
  }

  // True when i has a valid path to its terminal; fills the path length.
  bool origin_depth(int j, int& depth) {
    depth = 0;
    for (int k = j;;) {
      const Node& n = nodes_[std::size_t(k)];
      if (n.ts == time_) {
        depth += n.dist;
        return true;
      }
      if (n.parent == kTerminal) {
        ++depth;
        return true;
      }
      if (n.parent == kOrphan || n.parent == kNone) return false;
      ++depth;
      k = arcs_[std::size_t(n.parent)].head;
    }
  }

  void stamp(int j, int depth) {
    for (int k = j; nodes_[std::size_t(k)].ts != time_;) {
      Node& n = nodes_[std::size_t(k)];
      n.ts = time_;
      n.dist = depth--;
      if (n.parent == kTerminal) break;
      k = arcs_[std::size_t(n.parent)].head;
    }
  }

  void adopt_orphans() {
    while (!orphans_.empty()) {
      const int i = orphans_.front();
      orphans_.pop_front();
      Node& ni = nodes_[std::size_t(i)];
      const bool sink = ni.in_sink;
      int best_arc = kNone;
      int best_depth = std::numeric_limits<int>::max();
      for (int a = ni.first; a >= 0; a = arcs_[std::size_t(a)].next) {
        const int j = arcs_[std::size_t(a)].head;
        const Node& nj = nodes_[std::size_t(j)];
        if (nj.parent == kNone || nj.in_sink != sink) continue;
        // Residual capacity along the would-be tree arc.
        const Cap cap = sink ? arcs_[std::size_t(a)].r_cap : arcs_[std::size_t(arcs_[std::size_t(a)].sister)].r_cap;
        if (cap <= 0) continue;
        int depth = 0;
        if (origin_depth(j, depth) && depth < best_depth) {
          best_depth = depth;
          best_arc = a;
          stamp(j, depth);
        }
      }
      if (best_arc != kNone) {
        ni.parent = best_arc;
        ni.ts = time_;
        ni.dist = best_depth + 1;
        continue;
      }
      // No valid parent: i becomes free; children become orphans, neighbours re-activate.
      ni.ts = 0;
      for (int a = ni.first; a >= 0; a = arcs_[std::size_t(a)].next) {
        const int j = arcs_[std::size_t(a)].head;
        Node& nj = nodes_[std::size_t(j)];
        if (nj.parent == kNone || nj.in_sink != sink) continue;
        const Cap cap = sink ? arcs_[std::size_t(a)].r_cap : arcs_[std::size_t(arcs_[std::size_t(a)].sister)].r_cap;
        if (cap > 0) set_active(j);
        if (nj.parent != kTerminal && nj.parent != kOrphan && arcs_[std::size_t(nj.parent)].head == i)
          make_orphan(j);
      }
      ni.parent = kNone;
    }
  }

  std::vector<Node> nodes_;
  std::vector<Arc> arcs_;
  std::deque<int> active_;
  std::deque<int> orphans_;
  long time_ = 0;
  Cap flow_ = 0;
};

}  // namespace soc
