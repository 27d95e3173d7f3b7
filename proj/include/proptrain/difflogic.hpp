#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "proptrain/formula.hpp"
#include "proptrain/ndiff.hpp"

namespace proptrain {

// ---------------------------------------------------------------------------
// logic selection
// ---------------------------------------------------------------------------

enum class LogicKind { Dl2, Godel, Product, Lukasiewicz, Reichenbach, Yager, Stl, Boolean };

struct LogicInterpretation {
  LogicKind kind = LogicKind::Dl2;
  double yager_p = 2.0;       // >= 1
  double stl_nu = 1.0;        // > 0
  double dl2_xi = 1.0;        // > 0, penalty for violated != atoms
  double fuzzy_margin = 0.05; // > 0, width of the linear atom ramp
  // A/B switch: use the conjunction/disjunction pair exactly as commonly
  // printed for DL2 (and = product, or = sum) instead of the penalty-oriented
  // orientation (and = sum, or = product) used by default.
  bool dl2_table_literal = false;

  bool fuzzy() const {
    return kind == LogicKind::Godel || kind == LogicKind::Product || kind == LogicKind::Lukasiewicz ||
           kind == LogicKind::Reichenbach || kind == LogicKind::Yager;
  }

  // value of a fully true / fully false formula
  double top() const {
    switch (kind) {
      case LogicKind::Dl2: return 0.0;
      case LogicKind::Stl: return std::numeric_limits<double>::infinity();
      default: return 1.0;
    }
  }
  double bottom() const {
    switch (kind) {
      case LogicKind::Dl2: return std::numeric_limits<double>::infinity();
      case LogicKind::Stl: return -std::numeric_limits<double>::infinity();
      default: return 0.0;
    }
  }

  std::string name() const {
    switch (kind) {
      case LogicKind::Dl2: return "dl2";
      case LogicKind::Godel: return "goedel";
      case LogicKind::Product: return "product";
      case LogicKind::Lukasiewicz: return "lukasiewicz";
      case LogicKind::Reichenbach: return "reichenbach";
      case LogicKind::Yager: return "yager";
      case LogicKind::Stl: return "stl";
      case LogicKind::Boolean: return "boolean";
    }
    return "?";
  }

  void validate() const {
    if (yager_p < 1.0) throw std::invalid_argument("yager p must be >= 1");
    if (stl_nu <= 0.0) throw std::invalid_argument("stl nu must be > 0");
    if (dl2_xi <= 0.0) throw std::invalid_argument("dl2 xi must be > 0");
    if (fuzzy_margin <= 0.0) throw std::invalid_argument("fuzzy margin must be > 0");
  }

  static LogicInterpretation by_name(const std::string& name,
                                     const std::map<std::string, double>& params = {}) {
    LogicInterpretation l;
    if (name == "dl2") l.kind = LogicKind::Dl2;
    else if (name == "goedel") l.kind = LogicKind::Godel;
    else if (name == "product") l.kind = LogicKind::Product;
    else if (name == "lukasiewicz") l.kind = LogicKind::Lukasiewicz;
    else if (name == "reichenbach") l.kind = LogicKind::Reichenbach;
    else if (name == "yager") l.kind = LogicKind::Yager;
    else if (name == "stl") l.kind = LogicKind::Stl;
    else if (name == "boolean") l.kind = LogicKind::Boolean;
    else throw std::invalid_argument("unknown logic name: " + name);
    for (const auto& [k, v] : params) {
      if (k == "yager_p") l.yager_p = v;
      else if (k == "stl_nu") l.stl_nu = v;
      else if (k == "dl2_xi") l.dl2_xi = v;
      else if (k == "fuzzy_margin") l.fuzzy_margin = v;
      else throw std::invalid_argument("unknown logic parameter: " + k);
    }
    l.validate();
    return l;
  }
};

struct GradedValue {
  double value = 0.0;
};

// counts values that drifted past a domain boundary by more than 1e-9 and
// had to be clamped
inline std::atomic<std::uint64_t>& domain_clamp_count() {
  static std::atomic<std::uint64_t> n{0};
  return n;
}

// ---------------------------------------------------------------------------
// operator semantics (generic over double and tape Var)
// ---------------------------------------------------------------------------

namespace graded {

template <class T>
T clamp01(const T& x) {
  using std::max;
  using std::min;
  return min(max(x, T(0.0)), T(1.0));
}

// zero-gradient indicator [d == 0]
template <class T>
T indicator_zero(const T& d) {
  return T(value(d) == 0.0 ? 1.0 : 0.0);
}

template <class T>
T t_not(const LogicInterpretation& l, const T& x) {
  switch (l.kind) {
    case LogicKind::Dl2:
      throw std::logic_error("dl2 has no negation operator; normalise the formula first");
    case LogicKind::Stl: return -x;
    default: return T(1.0) - x;
  }
}

// n-ary smooth conjunction with the shadow-lifting property: a softmin-style
// exponentially weighted mean that returns 0 when the minimum is exactly 0.
template <class T>
T stl_and_n(std::span<const T> xs, double nu) {
  const double inf = std::numeric_limits<double>::infinity();
  // fully-false dominates; fully-true conjuncts are identity and drop out
  std::size_t k = 0;
  bool have_finite = false;
  double vmin = inf;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double v = value(xs[i]);
    if (v == -inf) return xs[i];
    if (v == inf) continue;
    if (!have_finite || v < vmin) {
      vmin = v;
      k = i;
      have_finite = true;
    }
  }
  if (!have_finite) return T(inf);
  if (vmin == 0.0) return T(0.0);
  const T& xmin = xs[k];
  using std::exp;
  if (vmin > 0.0) {
    T num(0.0), den(0.0);
    for (const T& x : xs) {
      if (value(x) == inf) continue;
      T w = exp((-nu) * (x / xmin));
      num = num + x * w;
      den = den + w;
    }
    return num / den;
  }
  T num(0.0), den(0.0);
  for (const T& x : xs) {
    if (value(x) == inf) continue;
    T r = x / xmin;
    T w = exp(nu * r);
    num = num + xmin * exp(r) * w;
    den = den + w;
  }
  return num / den;
}

template <class T>
T stl_or_n(std::span<const T> xs, double nu) {
  std::vector<T> neg;
  neg.reserve(xs.size());
  for (const T& x : xs) neg.push_back(-x);
  return -stl_and_n<T>(neg, nu);
}

template <class T>
T fuzzy_and(const LogicInterpretation& l, const T& x, const T& y) {
  using std::max;
  using std::min;
  switch (l.kind) {
    case LogicKind::Godel: return min(x, y);
    case LogicKind::Product:
    case LogicKind::Reichenbach: return x * y;
    case LogicKind::Lukasiewicz: return max(T(0.0), x + y - T(1.0));
    case LogicKind::Yager: {
      T s = pow_real(pow_real(T(1.0) - x, l.yager_p) + pow_real(T(1.0) - y, l.yager_p), 1.0 / l.yager_p);
      return max(T(0.0), T(1.0) - s);
    }
    default: break;
  }
  throw std::logic_error("fuzzy_and: not a fuzzy logic");
}

template <class T>
T fuzzy_or(const LogicInterpretation& l, const T& x, const T& y) {
  using std::max;
  using std::min;
  switch (l.kind) {
    case LogicKind::Godel: return max(x, y);
    case LogicKind::Product:
    case LogicKind::Reichenbach: return x + y - x * y;
    case LogicKind::Lukasiewicz: return min(T(1.0), x + y);
    case LogicKind::Yager:
      return min(T(1.0), pow_real(pow_real(x, l.yager_p) + pow_real(y, l.yager_p), 1.0 / l.yager_p));
    default: break;
  }
  throw std::logic_error("fuzzy_or: not a fuzzy logic");
}

template <class T>
T dl2_and_n(const LogicInterpretation& l, std::span<const T> xs) {
  const double inf = std::numeric_limits<double>::infinity();
  if (l.dl2_table_literal) {
    for (const T& x : xs)
      if (value(x) == inf) return T(inf);
    T r = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) r = r * xs[i];
    return r;
  }
  T r = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) r = r + xs[i];
  return r;
}

template <class T>
T dl2_or_n(const LogicInterpretation& l, std::span<const T> xs) {
  const double inf = std::numeric_limits<double>::infinity();
  if (l.dl2_table_literal) {
    T r = xs[0];
    for (std::size_t i = 1; i < xs.size(); ++i) r = r + xs[i];
    return r;
  }
  // a fully-false disjunct is the identity; drop it to keep products finite
  std::vector<T> finite;
  finite.reserve(xs.size());
  for (const T& x : xs)
    if (value(x) != inf) finite.push_back(x);
  if (finite.empty()) return T(inf);
  T r = finite[0];
  for (std::size_t i = 1; i < finite.size(); ++i) r = r * finite[i];
  return r;
}

template <class T>
T and_n(const LogicInterpretation& l, std::span<const T> xs) {
  using std::min;
  switch (l.kind) {
    case LogicKind::Dl2: return dl2_and_n(l, xs);
    case LogicKind::Stl: return stl_and_n(xs, l.stl_nu);
    case LogicKind::Boolean: {
      double r = 1.0;
      for (const T& x : xs) r = std::min(r, value(x));
      return T(r);
    }
    default: {
      T r = xs[0];
      for (std::size_t i = 1; i < xs.size(); ++i) r = fuzzy_and(l, r, xs[i]);
      return r;
    }
  }
}

template <class T>
T or_n(const LogicInterpretation& l, std::span<const T> xs) {
  switch (l.kind) {
    case LogicKind::Dl2: return dl2_or_n(l, xs);
    case LogicKind::Stl: return stl_or_n(xs, l.stl_nu);
    case LogicKind::Boolean: {
      double r = 0.0;
      for (const T& x : xs) r = std::max(r, value(x));
      return T(r);
    }
    default: {
      T r = xs[0];
      for (std::size_t i = 1; i < xs.size(); ++i) r = fuzzy_or(l, r, xs[i]);
      return r;
    }
  }
}

template <class T>
T t_and(const LogicInterpretation& l, const T& x, const T& y) {
  const T xs[2] = {x, y};
  return and_n(l, std::span<const T>(xs, 2));
}

template <class T>
T t_or(const LogicInterpretation& l, const T& x, const T& y) {
  const T xs[2] = {x, y};
  return or_n(l, std::span<const T>(xs, 2));
}

// graded truth of a comparison atom from the signed margin d = lhs - rhs
template <class T>
T atom_truth(const LogicInterpretation& l, CmpOp op, const T& d) {
  using std::abs;
  using std::max;
  switch (l.kind) {
    case LogicKind::Dl2:
      switch (op) {
        case CmpOp::Le: return max(T(0.0), d);
        case CmpOp::Eq: return abs(d);
        case CmpOp::Ne: return T(l.dl2_xi) * indicator_zero(d);
        case CmpOp::Lt: return t_and(l, max(T(0.0), d), T(l.dl2_xi) * indicator_zero(d));
      }
      break;
    case LogicKind::Stl:
      switch (op) {
        case CmpOp::Le: return -d;
        case CmpOp::Eq: return -abs(d);
        case CmpOp::Ne: return abs(d);
        case CmpOp::Lt: return t_and(l, -d, abs(d));
      }
      break;
    case LogicKind::Boolean: {
      double v = value(d);
      switch (op) {
        case CmpOp::Le: return T(v <= 0.0 ? 1.0 : 0.0);
        case CmpOp::Lt: return T(v < 0.0 ? 1.0 : 0.0);
        case CmpOp::Eq: return T(v == 0.0 ? 1.0 : 0.0);
        case CmpOp::Ne: return T(v != 0.0 ? 1.0 : 0.0);
      }
      break;
    }
    default:  // fuzzy family: linear ramp of width fuzzy_margin
      switch (op) {
        case CmpOp::Le: return clamp01(T(1.0) - d * T(1.0 / l.fuzzy_margin));
        case CmpOp::Eq: return clamp01(T(1.0) - abs(d) * T(1.0 / l.fuzzy_margin));
        case CmpOp::Ne: return T(1.0) - atom_truth(l, CmpOp::Eq, d);
        case CmpOp::Lt: return t_and(l, atom_truth(l, CmpOp::Le, d), atom_truth(l, CmpOp::Ne, d));
      }
  }
  throw std::logic_error("atom_truth: unreachable");
}

}  // namespace graded

// ---------------------------------------------------------------------------
// formula interpretation
// ---------------------------------------------------------------------------

template <class T, class Env>
T interpret_value(const Formula& f, const LogicInterpretation& l, const Env& env) {
  switch (f.kind) {
    case FormulaKind::True: return T(l.top());
    case FormulaKind::False: return T(l.bottom());
    case FormulaKind::Atom: {
      T d = eval_term(*f.lhs, env) - eval_term(*f.rhs, env);
      return graded::atom_truth(l, f.op, d);
    }
    case FormulaKind::And:
    case FormulaKind::Or: {
      std::vector<T> vs;
      vs.reserve(f.children.size());
      for (const auto& c : f.children) vs.push_back(interpret_value<T>(*c, l, env));
      return f.kind == FormulaKind::And ? graded::and_n<T>(l, vs) : graded::or_n<T>(l, vs);
    }
    case FormulaKind::Not:
    case FormulaKind::Implies:
    case FormulaKind::Equiv:
      throw std::logic_error("interpret requires a formula in negation normal form");
  }
  throw std::logic_error("interpret_value: unreachable");
}

// Graded truth of an NNF formula.  Values are snapped to the logic's domain;
// drift beyond 1e-9 bumps the diagnostic counter.
inline GradedValue interpret(const Formula& f_nnf, const LogicInterpretation& l,
                             const Environment& env) {
  double v = interpret_value<double>(f_nnf, l, env);
  double lo = 0.0, hi = std::numeric_limits<double>::infinity();
  bool bounded = true;
  if (l.kind == LogicKind::Dl2) {
    lo = 0.0;
  } else if (l.kind == LogicKind::Stl) {
    bounded = false;
  } else {
    lo = 0.0;
    hi = 1.0;
  }
  if (bounded) {
    if (v < lo) {
      if (v < lo - 1e-9) domain_clamp_count()++;
      v = lo;
    } else if (v > hi) {
      if (v > hi + 1e-9) domain_clamp_count()++;
      v = hi;
    }
  }
  return GradedValue{v};
}

inline GradedValue interpret(const FormulaPtr& f_nnf, const LogicInterpretation& l,
                             const Environment& env) {
  return interpret(*f_nnf, l, env);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Nonnegative-oriented training/adversary scalar: the trainer minimises it,
// the adversary maximises it.
template <class T>
T loss_value(const T& truth, const LogicInterpretation& l) {
  switch (l.kind) {
    case LogicKind::Dl2: return truth;
    case LogicKind::Stl: return -truth;
    default: return T(1.0) - truth;
  }
}

inline double loss_of(GradedValue v, const LogicInterpretation& l) {
  return loss_value(v.value, l);
}

inline double constraint_loss(const Formula& q, const LogicInterpretation& l,
                              const Environment& env) {
  return loss_of(interpret(*to_nnf(std::make_shared<Formula>(q)), l, env), l);
}

inline double constraint_loss(const FormulaPtr& q, const LogicInterpretation& l,
                              const Environment& env) {
  return loss_of(interpret(*to_nnf(q), l, env), l);
}

// ---------------------------------------------------------------------------
// reverse-mode glue
// ---------------------------------------------------------------------------

// Environment over tape variables.  Leaves are created lazily per referenced
// index so constraints touching few components keep the tape small.
struct AdEnv {
  Tape* tape;
  std::span<const double> candidate, anchor, target, f_candidate, f_anchor;
  mutable std::vector<int> cand_ids, out_ids, aout_ids;  // -1 = leaf not created

  AdEnv(Tape& t, std::span<const double> cand, std::span<const double> anc,
        std::span<const double> tgt, std::span<const double> fc, std::span<const double> fa)
      : tape(&t), candidate(cand), anchor(anc), target(tgt), f_candidate(fc), f_anchor(fa) {
    cand_ids.assign(candidate.size(), -1);
    out_ids.assign(f_candidate.size(), -1);
    aout_ids.assign(f_anchor.size(), -1);
  }

  Var leaf(std::vector<int>& ids, std::span<const double> vals, int i) const {
    int& id = ids[std::size_t(i)];
    if (id < 0) id = tape->leaf(vals[std::size_t(i)]);
    Var v;
    v.tape = tape;
    v.id = id;
    v.v = vals[std::size_t(i)];
    return v;
  }

  Var candidate_at(int i) const {
    check(i, candidate.size(), "candidate input");
    return leaf(cand_ids, candidate, i);
  }
  Var anchor_at(int i) const {
    check(i, anchor.size(), "anchor input");
    return Var(anchor[std::size_t(i)]);
  }
  Var target_at(int i) const {
    check(i, target.size(), "target");
    return Var(target[std::size_t(i)]);
  }
  Var output_at(int i) const {
    check(i, f_candidate.size(), "output");
    return leaf(out_ids, f_candidate, i);
  }
  Var anchor_output_at(int i) const {
    check(i, f_anchor.size(), "anchor output");
    return leaf(aout_ids, f_anchor, i);
  }

  static void check(int i, std::size_t n, const char* what) {
    if (i < 0 || std::size_t(i) >= n)
      throw std::out_of_range(std::string("term index out of range for ") + what);
  }
};

struct ConstraintGrad {
  double loss = 0.0;
  std::vector<double> d_candidate;      // direct dependence on x'
  std::vector<double> d_output;         // dL/df(x')
  std::vector<double> d_anchor_output;  // dL/df(x)
};

// Loss and its adjoints w.r.t. candidate point and network outputs; the
// caller chains d_output through the network for full input/parameter grads.
// Reuses the buffers of `g` across calls.
inline void constraint_loss_grad_into(const Formula& q_nnf, const LogicInterpretation& l,
                                      std::span<const double> anchor,
                                      std::span<const double> candidate,
                                      std::span<const double> target,
                                      std::span<const double> f_candidate,
                                      std::span<const double> f_anchor, Tape& tape,
                                      ConstraintGrad& g) {
  tape.clear();
  AdEnv env(tape, candidate, anchor, target, f_candidate, f_anchor);

  Var truth = interpret_value<Var>(q_nnf, l, env);
  Var loss = loss_value(truth, l);

  g.loss = loss.v;
  g.d_candidate.assign(candidate.size(), 0.0);
  g.d_output.assign(f_candidate.size(), 0.0);
  g.d_anchor_output.assign(f_anchor.size(), 0.0);
  if (loss.id >= 0 && std::isfinite(loss.v)) {
    tape.backward(loss.id);
    for (std::size_t i = 0; i < env.cand_ids.size(); ++i)
      if (env.cand_ids[i] >= 0) g.d_candidate[i] = tape.adjoint(env.cand_ids[i]);
    for (std::size_t i = 0; i < env.out_ids.size(); ++i)
      if (env.out_ids[i] >= 0) g.d_output[i] = tape.adjoint(env.out_ids[i]);
    for (std::size_t i = 0; i < env.aout_ids.size(); ++i)
      if (env.aout_ids[i] >= 0) g.d_anchor_output[i] = tape.adjoint(env.aout_ids[i]);
  }
}

inline ConstraintGrad constraint_loss_grad(const Formula& q_nnf, const LogicInterpretation& l,
                                           std::span<const double> anchor,
                                           std::span<const double> candidate,
                                           std::span<const double> target,
                                           std::span<const double> f_candidate,
                                           std::span<const double> f_anchor, Tape& tape) {
  ConstraintGrad g;
  constraint_loss_grad_into(q_nnf, l, anchor, candidate, target, f_candidate, f_anchor, tape, g);
  return g;
}

}  // namespace proptrain
