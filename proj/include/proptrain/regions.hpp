#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "proptrain/formula.hpp"
#include "proptrain/rng.hpp"

namespace proptrain {

// ---------------------------------------------------------------------------
// axis-aligned boxes
// ---------------------------------------------------------------------------

struct Box {
  std::vector<double> lo, hi;

  Box() = default;
  Box(std::vector<double> l, std::vector<double> h) : lo(std::move(l)), hi(std::move(h)) {
    if (lo.size() != hi.size()) throw std::invalid_argument("Box: lo/hi size mismatch");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] <= hi[i])) throw std::invalid_argument("Box: requires lo <= hi per dimension");
  }

  int dim() const { return int(lo.size()); }

  bool contains(std::span<const double> p) const {
    if (int(p.size()) != dim()) throw std::invalid_argument("Box::contains: dimension mismatch");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (p[i] < lo[i] || p[i] > hi[i]) return false;
    return true;
  }

  double volume() const {
    double v = 1.0;
    for (std::size_t i = 0; i < lo.size(); ++i) v *= hi[i] - lo[i];
    return v;
  }

  // intersection, or nullopt when some dimension becomes empty
  static std::optional<Box> intersect(const Box& a, const Box& b) {
    Box r;
    r.lo.resize(a.lo.size());
    r.hi.resize(a.hi.size());
    for (std::size_t i = 0; i < a.lo.size(); ++i) {
      r.lo[i] = std::max(a.lo[i], b.lo[i]);
      r.hi[i] = std::min(a.hi[i], b.hi[i]);
      if (r.lo[i] > r.hi[i]) return std::nullopt;
    }
    return r;
  }

  bool subset_of(const Box& b) const {
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (lo[i] < b.lo[i] || hi[i] > b.hi[i]) return false;
    return true;
  }
};

// Finite union of boxes clamped to a common bounding domain.  Boxes may
// overlap; membership, sampling and projection do not require disjointness.
class BoxSet {
 public:
  explicit BoxSet(Box domain) : domain_(std::move(domain)) {}

  static BoxSet empty(Box domain) { return BoxSet(std::move(domain)); }

  static BoxSet whole(Box domain) {
    BoxSet s(domain);
    s.boxes_.push_back(std::move(domain));
    return s;
  }

  int dim() const { return domain_.dim(); }
  const Box& domain() const { return domain_; }
  bool is_empty() const { return boxes_.empty(); }
  std::size_t size() const { return boxes_.size(); }
  const std::vector<Box>& boxes() const { return boxes_; }
  const Box& box(std::size_t i) const { return boxes_[i]; }

  // clamps to the domain and drops boxes that fall outside it
  void add(const Box& b) {
    if (b.dim() != dim()) throw std::invalid_argument("BoxSet::add: dimension mismatch");
    if (auto c = Box::intersect(b, domain_)) boxes_.push_back(std::move(*c));
  }

 private:
  Box domain_;
  std::vector<Box> boxes_;
};

inline bool contains(const BoxSet& s, std::span<const double> p) {
  if (int(p.size()) != s.dim()) throw std::invalid_argument("contains: dimension mismatch");
  for (const Box& b : s.boxes())
    if (b.contains(p)) return true;
  return false;
}

// ---------------------------------------------------------------------------
// set algebra (membership semantics; boundaries are measure-zero sloppy)
// ---------------------------------------------------------------------------

namespace detail {

inline void check_same_space(const BoxSet& a, const BoxSet& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument("box sets have different dimensionality");
}

// drop boxes subsumed by another box in the list
inline void prune_subsumed(std::vector<Box>& boxes) {
  std::vector<Box> kept;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    bool covered = false;
    for (std::size_t j = 0; j < boxes.size() && !covered; ++j)
      if (i != j && boxes[i].subset_of(boxes[j]) && !(j > i && boxes[j].subset_of(boxes[i])))
        covered = true;
    if (!covered) kept.push_back(boxes[i]);
  }
  boxes = std::move(kept);
}

}  // namespace detail

inline BoxSet union_of(const BoxSet& a, const BoxSet& b) {
  detail::check_same_space(a, b);
  BoxSet r(a.domain());
  for (const Box& x : a.boxes()) r.add(x);
  for (const Box& x : b.boxes()) r.add(x);
  return r;
}

inline BoxSet intersect(const BoxSet& a, const BoxSet& b) {
  detail::check_same_space(a, b);
  BoxSet r(a.domain());
  for (const Box& x : a.boxes())
    for (const Box& y : b.boxes())
      if (auto c = Box::intersect(x, y)) r.add(*c);
  return r;
}

// Complement within the domain.  A single box splits into at most 2m slabs;
// a union is complemented by intersecting the per-box complements.
inline BoxSet complement(const BoxSet& s) {
  BoxSet acc = BoxSet::whole(s.domain());
  const Box& D = s.domain();
  for (const Box& b : s.boxes()) {
    BoxSet comp(D);
    for (int i = 0; i < D.dim(); ++i) {
      if (b.lo[i] > D.lo[i]) {
        Box slab = D;
        slab.hi[i] = b.lo[i];
        comp.add(slab);
      }
      if (b.hi[i] < D.hi[i]) {
        Box slab = D;
        slab.lo[i] = b.hi[i];
        comp.add(slab);
      }
    }
    acc = intersect(acc, comp);
    if (acc.is_empty()) break;
    if (acc.size() > 64) {
      auto boxes = acc.boxes();
      detail::prune_subsumed(boxes);
      BoxSet pruned(D);
      for (const Box& x : boxes) pruned.add(x);
      acc = std::move(pruned);
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------
// sampling and projection
// ---------------------------------------------------------------------------

// Volume-weighted box choice; equal weights when every box is degenerate.
inline std::size_t sample_box_index(const BoxSet& s, Rng& rng) {
  if (s.is_empty()) throw std::logic_error("sample from empty region");
  double total = 0.0;
  for (const Box& b : s.boxes()) total += b.volume();
  if (total <= 0.0) return std::size_t(rng.below(s.size()));
  double u = rng.uniform() * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    acc += s.box(i).volume();
    if (u < acc) return i;
  }
  return s.size() - 1;
}

inline std::vector<double> sample_in_box(const Box& b, Rng& rng) {
  std::vector<double> p(static_cast<std::size_t>(b.dim()));
  for (int i = 0; i < b.dim(); ++i) p[std::size_t(i)] = b.lo[i] + (b.hi[i] - b.lo[i]) * rng.uniform();
  return p;
}

inline std::vector<double> sample_uniform(const BoxSet& s, Rng& rng) {
  return sample_in_box(s.box(sample_box_index(s, rng)), rng);
}

// Index of the box whose clamp of p is nearest in Euclidean distance;
// ties broken by lowest box index.
inline std::size_t nearest_box(const BoxSet& s, std::span<const double> p) {
  if (s.is_empty()) throw std::logic_error("project onto empty region");
  if (int(p.size()) != s.dim()) throw std::invalid_argument("project: dimension mismatch");
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < s.size(); ++k) {
    const Box& b = s.box(k);
    double d2 = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double c = std::clamp(p[i], b.lo[i], b.hi[i]);
      d2 += (c - p[i]) * (c - p[i]);
    }
    if (d2 < best_d2) {
      best_d2 = d2;
      best = k;
    }
  }
  return best;
}

// Euclidean projection onto the union: clamp into every box, keep the
// closest candidate; ties broken by lowest box index.
inline void project_into(const BoxSet& s, std::span<const double> p, std::span<double> out) {
  const Box& b = s.box(nearest_box(s, p));
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = std::clamp(p[i], b.lo[i], b.hi[i]);
}

inline std::vector<double> project(const BoxSet& s, std::span<const double> p) {
  std::vector<double> out(p.size());
  project_into(s, p, out);
  return out;
}

inline BoxSet epsilon_ball(std::span<const double> x, double eps, const Box& domain) {
  if (eps < 0.0) throw std::invalid_argument("epsilon_ball: eps must be >= 0");
  if (int(x.size()) != domain.dim()) throw std::invalid_argument("epsilon_ball: dimension mismatch");
  Box b;
  b.lo.resize(x.size());
  b.hi.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    b.lo[i] = x[i] - eps;
    b.hi[i] = x[i] + eps;
  }
  BoxSet s(domain);
  s.add(b);
  return s;
}

// ---------------------------------------------------------------------------
// exact disjoint decomposition
// ---------------------------------------------------------------------------
//
// Splits overlapping boxes so volumes add up exactly.  Cost grows quickly
// with dimension; intended for the small-m sets used by metrics (m <= 6).

namespace detail {

// pieces of `b` not covered by `cut`, by axis-sweep splitting
inline void subtract_box(const Box& b, const Box& cut, std::vector<Box>& out) {
  auto overlap = Box::intersect(b, cut);
  if (!overlap) {
    out.push_back(b);
    return;
  }
  Box rest = b;
  for (int i = 0; i < b.dim(); ++i) {
    if (overlap->lo[i] > rest.lo[i]) {
      Box piece = rest;
      piece.hi[i] = overlap->lo[i];
      out.push_back(piece);
      rest.lo[i] = overlap->lo[i];
    }
    if (overlap->hi[i] < rest.hi[i]) {
      Box piece = rest;
      piece.lo[i] = overlap->hi[i];
      out.push_back(piece);
      rest.hi[i] = overlap->hi[i];
    }
  }
}

}  // namespace detail

inline BoxSet disjointify(const BoxSet& s) {
  BoxSet r(s.domain());
  std::vector<Box> accepted;
  for (const Box& b : s.boxes()) {
    std::vector<Box> pieces{b};
    for (const Box& a : accepted) {
      std::vector<Box> next;
      for (const Box& p : pieces) detail::subtract_box(p, a, next);
      pieces = std::move(next);
      if (pieces.empty()) break;
    }
    for (Box& p : pieces) accepted.push_back(std::move(p));
  }
  for (const Box& b : accepted) r.add(b);
  return r;
}

// ---------------------------------------------------------------------------
// precondition translation
// ---------------------------------------------------------------------------
//
// Turns a precondition over candidate inputs into a box set by structural
// induction: atoms tighten one dimension of the domain, And intersects,
// Or unions, Not complements.  Anchor-input terms are read from `anchor`, so
// predicates relative to the clean point become constant bounds per sample.

namespace detail {

// evaluates a term that may only contain constants and anchor components
inline std::optional<double> const_value(const Term& t, std::span<const double> anchor) {
  switch (t.kind) {
    case TermKind::Constant: return t.constant;
    case TermKind::AnchorInput:
      if (t.index < 0 || std::size_t(t.index) >= anchor.size())
        throw std::out_of_range("anchor index out of range in precondition");
      return anchor[std::size_t(t.index)];
    case TermKind::Input:
    case TermKind::Output:
    case TermKind::AnchorOutput:
    case TermKind::Target: return std::nullopt;
    case TermKind::Add:
    case TermKind::Sub:
    case TermKind::Mul: {
      auto a = const_value(*t.lhs, anchor);
      auto b = const_value(*t.rhs, anchor);
      if (!a || !b) return std::nullopt;
      if (t.kind == TermKind::Add) return *a + *b;
      if (t.kind == TermKind::Sub) return *a - *b;
      return *a * *b;
    }
    case TermKind::Abs: {
      auto a = const_value(*t.lhs, anchor);
      return a ? std::optional<double>(std::fabs(*a)) : std::nullopt;
    }
    case TermKind::Norm: {
      double l1 = 0.0, l2 = 0.0, li = 0.0;
      for (const auto& arg : t.args) {
        auto a = const_value(*arg, anchor);
        if (!a) return std::nullopt;
        l1 += std::fabs(*a);
        l2 += *a * *a;
        li = std::max(li, std::fabs(*a));
      }
      if (t.order == NormOrder::One) return l1;
      if (t.order == NormOrder::Two) return std::sqrt(l2);
      return li;
    }
  }
  return std::nullopt;
}

[[noreturn]] inline void bad_precondition_atom(const Formula& atom) {
  throw std::invalid_argument(
      "precondition atom is not a constant bound on an input component: " + to_sexpr(atom));
}

inline BoxSet translate_atom(const Formula& f, const Box& domain, std::span<const double> anchor) {
  auto cl = const_value(*f.lhs, anchor);
  auto cr = const_value(*f.rhs, anchor);
  // degenerate atom over constants only: crisp truth
  if (cl && cr) {
    bool truth = false;
    switch (f.op) {
      case CmpOp::Le: truth = *cl <= *cr; break;
      case CmpOp::Lt: truth = *cl < *cr; break;
      case CmpOp::Eq: truth = *cl == *cr; break;
      case CmpOp::Ne: truth = *cl != *cr; break;
    }
    return truth ? BoxSet::whole(domain) : BoxSet::empty(domain);
  }
  const Term* var = nullptr;
  double bound = 0.0;
  bool var_on_left = false;
  if (!cl && cr && f.lhs->kind == TermKind::Input) {
    var = f.lhs.get();
    bound = *cr;
    var_on_left = true;
  } else if (!cr && cl && f.rhs->kind == TermKind::Input) {
    var = f.rhs.get();
    bound = *cl;
    var_on_left = false;
  } else {
    bad_precondition_atom(f);
  }
  int i = var->index;
  if (i < 0 || i >= domain.dim()) throw std::out_of_range("input index out of range in precondition");

  // normalise to a bound on x_i; boxes are closed so strict bounds collapse
  // onto their closure (a measure-zero difference)
  BoxSet r(domain);
  Box b = domain;
  switch (f.op) {
    case CmpOp::Le:
    case CmpOp::Lt:
      if (var_on_left) b.hi[i] = std::min(b.hi[i], bound);  // x_i <= c
      else b.lo[i] = std::max(b.lo[i], bound);              // c <= x_i
      if (b.lo[i] > b.hi[i]) return BoxSet::empty(domain);
      r.add(b);
      return r;
    case CmpOp::Eq:
      b.lo[i] = std::max(b.lo[i], bound);
      b.hi[i] = std::min(b.hi[i], bound);
      if (b.lo[i] > b.hi[i]) return BoxSet::empty(domain);
      r.add(b);
      return r;
    case CmpOp::Ne: {
      // complement of a degenerate slab; closed boundaries overlap at c
      if (bound < domain.lo[i] || bound > domain.hi[i]) return BoxSet::whole(domain);
      Box left = domain, right = domain;
      left.hi[i] = bound;
      right.lo[i] = bound;
      r.add(left);
      r.add(right);
      return r;
    }
  }
  bad_precondition_atom(f);
}

// true when the term evaluates to a constant for any anchor (only constant
// and anchor-input leaves)
inline bool is_const_shape(const Term& t) {
  bool ok = true;
  visit_terms(t, [&ok](const Term& x) {
    if (x.kind == TermKind::Input || x.kind == TermKind::Output || x.kind == TermKind::AnchorOutput ||
        x.kind == TermKind::Target)
      ok = false;
  });
  return ok;
}

// And-tree of True and non-splitting bound atoms: translates to one box
inline bool is_bound_conjunction(const Formula& f) {
  switch (f.kind) {
    case FormulaKind::True: return true;
    case FormulaKind::Atom: {
      if (f.op == CmpOp::Ne) return false;  // splits the domain
      bool cl = is_const_shape(*f.lhs), cr = is_const_shape(*f.rhs);
      if (cl && cr) return true;
      if (cl && f.rhs->kind == TermKind::Input) return true;
      if (cr && f.lhs->kind == TermKind::Input) return true;
      return false;
    }
    case FormulaKind::And:
      for (const auto& c : f.children)
        if (!is_bound_conjunction(*c)) return false;
      return true;
    default: return false;
  }
}

// folds bound atoms into `b` in place; false once the box goes empty
inline bool fold_bound_conjunction(const Formula& f, Box& b, std::span<const double> anchor) {
  switch (f.kind) {
    case FormulaKind::True: return true;
    case FormulaKind::And:
      for (const auto& c : f.children)
        if (!fold_bound_conjunction(*c, b, anchor)) return false;
      return true;
    case FormulaKind::Atom: {
      auto cl = const_value(*f.lhs, anchor);
      auto cr = const_value(*f.rhs, anchor);
      if (cl && cr) {
        switch (f.op) {
          case CmpOp::Le: return *cl <= *cr;
          case CmpOp::Lt: return *cl < *cr;
          case CmpOp::Eq: return *cl == *cr;
          default: return false;
        }
      }
      int i;
      if (cr && f.lhs->kind == TermKind::Input) {  // x_i <= c
        i = f.lhs->index;
        if (i < 0 || i >= b.dim()) throw std::out_of_range("input index out of range in precondition");
        b.hi[std::size_t(i)] = std::min(b.hi[std::size_t(i)], *cr);
        if (f.op == CmpOp::Eq) b.lo[std::size_t(i)] = std::max(b.lo[std::size_t(i)], *cr);
      } else {  // c <= x_i
        i = f.rhs->index;
        if (i < 0 || i >= b.dim()) throw std::out_of_range("input index out of range in precondition");
        b.lo[std::size_t(i)] = std::max(b.lo[std::size_t(i)], *cl);
        if (f.op == CmpOp::Eq) b.hi[std::size_t(i)] = std::min(b.hi[std::size_t(i)], *cl);
      }
      return b.lo[std::size_t(i)] <= b.hi[std::size_t(i)];
    }
    default: return false;
  }
}

}  // namespace detail

inline BoxSet translate_precondition(const Formula& p, const Box& domain,
                                     std::span<const double> anchor) {
  // common case: a plain conjunction of per-dimension bounds folds into a
  // single box without materialising intermediate sets
  if (detail::is_bound_conjunction(p)) {
    Box b = domain;
    if (!detail::fold_bound_conjunction(p, b, anchor)) return BoxSet::empty(domain);
    BoxSet r(domain);
    r.add(b);
    return r;
  }
  switch (p.kind) {
    case FormulaKind::True: return BoxSet::whole(domain);
    case FormulaKind::False: return BoxSet::empty(domain);
    case FormulaKind::Atom: return detail::translate_atom(p, domain, anchor);
    case FormulaKind::Not: return complement(translate_precondition(*p.children[0], domain, anchor));
    case FormulaKind::And: {
      BoxSet r = translate_precondition(*p.children[0], domain, anchor);
      for (std::size_t i = 1; i < p.children.size() && !r.is_empty(); ++i)
        r = intersect(r, translate_precondition(*p.children[i], domain, anchor));
      return r;
    }
    case FormulaKind::Or: {
      BoxSet r = translate_precondition(*p.children[0], domain, anchor);
      for (std::size_t i = 1; i < p.children.size(); ++i)
        r = union_of(r, translate_precondition(*p.children[i], domain, anchor));
      return r;
    }
    case FormulaKind::Implies: {
      BoxSet a = translate_precondition(*p.children[0], domain, anchor);
      BoxSet b = translate_precondition(*p.children[1], domain, anchor);
      return union_of(complement(a), b);
    }
    case FormulaKind::Equiv: {
      BoxSet a = translate_precondition(*p.children[0], domain, anchor);
      BoxSet b = translate_precondition(*p.children[1], domain, anchor);
      return union_of(intersect(a, b), intersect(complement(a), complement(b)));
    }
  }
  throw std::logic_error("translate_precondition: unreachable");
}

inline BoxSet translate_precondition(const FormulaPtr& p, const Box& domain,
                                     std::span<const double> anchor) {
  return translate_precondition(*p, domain, anchor);
}

}  // namespace proptrain
