#pragma once

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "proptrain/ndiff.hpp"

namespace proptrain {

// ---------------------------------------------------------------------------
// terms
// ---------------------------------------------------------------------------

enum class TermKind {
  Input,         // component of the candidate point x'
  AnchorInput,   // component of the clean anchor x
  Output,        // component of f(x')
  AnchorOutput,  // component of f(x)
  Target,        // component of the label/target y
  Constant,
  Add,
  Sub,
  Mul,
  Abs,
  Norm,
};

enum class NormOrder { One, Two, Inf };

struct Term;
using TermPtr = std::shared_ptr<const Term>;

struct Term {
  TermKind kind;
  int index = 0;
  double constant = 0.0;
  TermPtr lhs, rhs;           // Add/Sub/Mul; Abs uses lhs only
  std::vector<TermPtr> args;  // Norm
  NormOrder order = NormOrder::Two;
};

namespace dsl {

inline TermPtr component(TermKind k, int i) {
  if (i < 0) throw std::invalid_argument("term component index must be >= 0");
  auto t = std::make_shared<Term>();
  t->kind = k;
  t->index = i;
  return t;
}
inline TermPtr in(int i) { return component(TermKind::Input, i); }
inline TermPtr anchor_in(int i) { return component(TermKind::AnchorInput, i); }
inline TermPtr out(int i) { return component(TermKind::Output, i); }
inline TermPtr anchor_out(int i) { return component(TermKind::AnchorOutput, i); }
inline TermPtr target(int i) { return component(TermKind::Target, i); }

inline TermPtr lit(double v) {
  auto t = std::make_shared<Term>();
  t->kind = TermKind::Constant;
  t->constant = v;
  return t;
}

inline TermPtr binary(TermKind k, TermPtr a, TermPtr b) {
  auto t = std::make_shared<Term>();
  t->kind = k;
  t->lhs = std::move(a);
  t->rhs = std::move(b);
  return t;
}
inline TermPtr add(TermPtr a, TermPtr b) { return binary(TermKind::Add, std::move(a), std::move(b)); }
inline TermPtr sub(TermPtr a, TermPtr b) { return binary(TermKind::Sub, std::move(a), std::move(b)); }
inline TermPtr mul(TermPtr a, TermPtr b) { return binary(TermKind::Mul, std::move(a), std::move(b)); }

inline TermPtr abs(TermPtr a) {
  auto t = std::make_shared<Term>();
  t->kind = TermKind::Abs;
  t->lhs = std::move(a);
  return t;
}

inline TermPtr norm(std::vector<TermPtr> args, NormOrder order) {
  if (args.empty()) throw std::invalid_argument("norm needs at least one argument");
  auto t = std::make_shared<Term>();
  t->kind = TermKind::Norm;
  t->args = std::move(args);
  t->order = order;
  return t;
}

}  // namespace dsl

// ---------------------------------------------------------------------------
// formulas
// ---------------------------------------------------------------------------

enum class FormulaKind { True, False, Atom, Not, And, Or, Implies, Equiv };
enum class CmpOp { Le, Lt, Eq, Ne };

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
  FormulaKind kind;
  CmpOp op = CmpOp::Le;
  TermPtr lhs, rhs;
  std::vector<FormulaPtr> children;
};

namespace dsl {

inline FormulaPtr top() {
  auto f = std::make_shared<Formula>();
  f->kind = FormulaKind::True;
  return f;
}
inline FormulaPtr bot() {
  auto f = std::make_shared<Formula>();
  f->kind = FormulaKind::False;
  return f;
}

inline FormulaPtr atom(CmpOp op, TermPtr a, TermPtr b) {
  auto f = std::make_shared<Formula>();
  f->kind = FormulaKind::Atom;
  f->op = op;
  f->lhs = std::move(a);
  f->rhs = std::move(b);
  return f;
}
inline FormulaPtr leq(TermPtr a, TermPtr b) { return atom(CmpOp::Le, std::move(a), std::move(b)); }
inline FormulaPtr lt(TermPtr a, TermPtr b) { return atom(CmpOp::Lt, std::move(a), std::move(b)); }
inline FormulaPtr eq(TermPtr a, TermPtr b) { return atom(CmpOp::Eq, std::move(a), std::move(b)); }
inline FormulaPtr ne(TermPtr a, TermPtr b) { return atom(CmpOp::Ne, std::move(a), std::move(b)); }

inline FormulaPtr lnot(FormulaPtr a) {
  auto f = std::make_shared<Formula>();
  f->kind = FormulaKind::Not;
  f->children.push_back(std::move(a));
  return f;
}

inline FormulaPtr nary(FormulaKind k, std::vector<FormulaPtr> children) {
  if (children.size() < 2) throw std::invalid_argument("and/or need at least two children");
  auto f = std::make_shared<Formula>();
  f->kind = k;
  f->children = std::move(children);
  return f;
}
inline FormulaPtr land(std::vector<FormulaPtr> cs) { return nary(FormulaKind::And, std::move(cs)); }
inline FormulaPtr lor(std::vector<FormulaPtr> cs) { return nary(FormulaKind::Or, std::move(cs)); }
inline FormulaPtr land(FormulaPtr a, FormulaPtr b) {
  return nary(FormulaKind::And, {std::move(a), std::move(b)});
}
inline FormulaPtr lor(FormulaPtr a, FormulaPtr b) {
  return nary(FormulaKind::Or, {std::move(a), std::move(b)});
}

inline FormulaPtr implies(FormulaPtr a, FormulaPtr b) {
  auto f = std::make_shared<Formula>();
  f->kind = FormulaKind::Implies;
  f->children = {std::move(a), std::move(b)};
  return f;
}
inline FormulaPtr equiv(FormulaPtr a, FormulaPtr b) {
  auto f = std::make_shared<Formula>();
  f->kind = FormulaKind::Equiv;
  f->children = {std::move(a), std::move(b)};
  return f;
}

}  // namespace dsl

// ---------------------------------------------------------------------------
// evaluation environment
// ---------------------------------------------------------------------------

// Binds a formula's free symbols: anchor x, candidate x', target y, and a
// network for output terms.  Outputs are evaluated lazily and memoised.
class Environment {
 public:
  Environment(std::span<const double> anchor, std::span<const double> candidate,
              std::span<const double> target, const Network* net = nullptr)
      : anchor_(anchor), candidate_(candidate), target_(target), net_(net) {}

  double candidate_at(int i) const {
    check(i, candidate_.size(), "candidate input");
    return candidate_[std::size_t(i)];
  }
  double anchor_at(int i) const {
    check(i, anchor_.size(), "anchor input");
    return anchor_[std::size_t(i)];
  }
  double target_at(int i) const {
    check(i, target_.size(), "target");
    return target_[std::size_t(i)];
  }
  double output_at(int i) const {
    require_net();
    if (out_.empty()) out_ = net_->forward(candidate_);
    check(i, out_.size(), "output");
    return out_[std::size_t(i)];
  }
  double anchor_output_at(int i) const {
    require_net();
    if (anchor_out_.empty()) anchor_out_ = net_->forward(anchor_);
    check(i, anchor_out_.size(), "anchor output");
    return anchor_out_[std::size_t(i)];
  }

 private:
  static void check(int i, std::size_t n, const char* what) {
    if (i < 0 || std::size_t(i) >= n)
      throw std::out_of_range(std::string("term index out of range for ") + what);
  }
  void require_net() const {
    if (!net_) throw std::logic_error("environment has no network but formula uses output terms");
  }

  std::span<const double> anchor_, candidate_, target_;
  const Network* net_;
  mutable std::vector<double> out_, anchor_out_;
};

// ---------------------------------------------------------------------------
// term evaluation (generic over plain doubles and tape variables)
// ---------------------------------------------------------------------------

template <class Env>
auto eval_term(const Term& t, const Env& env) -> decltype(env.candidate_at(0)) {
  using T = decltype(env.candidate_at(0));
  using std::abs;
  using std::max;
  using std::sqrt;
  switch (t.kind) {
    case TermKind::Input: return env.candidate_at(t.index);
    case TermKind::AnchorInput: return env.anchor_at(t.index);
    case TermKind::Output: return env.output_at(t.index);
    case TermKind::AnchorOutput: return env.anchor_output_at(t.index);
    case TermKind::Target: return env.target_at(t.index);
    case TermKind::Constant: return T(t.constant);
    case TermKind::Add: return eval_term(*t.lhs, env) + eval_term(*t.rhs, env);
    case TermKind::Sub: return eval_term(*t.lhs, env) - eval_term(*t.rhs, env);
    case TermKind::Mul: return eval_term(*t.lhs, env) * eval_term(*t.rhs, env);
    case TermKind::Abs: return abs(eval_term(*t.lhs, env));
    case TermKind::Norm: {
      switch (t.order) {
        case NormOrder::One: {
          T s = abs(eval_term(*t.args[0], env));
          for (std::size_t i = 1; i < t.args.size(); ++i) s = s + abs(eval_term(*t.args[i], env));
          return s;
        }
        case NormOrder::Two: {
          T a0 = eval_term(*t.args[0], env);
          T s = a0 * a0;
          for (std::size_t i = 1; i < t.args.size(); ++i) {
            T ai = eval_term(*t.args[i], env);
            s = s + ai * ai;
          }
          return sqrt(s);
        }
        case NormOrder::Inf: {
          T s = abs(eval_term(*t.args[0], env));
          for (std::size_t i = 1; i < t.args.size(); ++i) s = max(s, abs(eval_term(*t.args[i], env)));
          return s;
        }
      }
      break;
    }
  }
  throw std::logic_error("eval_term: unreachable");
}

inline double eval_term(const TermPtr& t, const Environment& env) { return eval_term(*t, env); }

// ---------------------------------------------------------------------------
// crisp Boolean semantics
// ---------------------------------------------------------------------------

inline bool eval_bool(const Formula& f, const Environment& env) {
  switch (f.kind) {
    case FormulaKind::True: return true;
    case FormulaKind::False: return false;
    case FormulaKind::Atom: {
      double a = eval_term(*f.lhs, env);
      double b = eval_term(*f.rhs, env);
      switch (f.op) {
        case CmpOp::Le: return a <= b;
        case CmpOp::Lt: return a < b;
        case CmpOp::Eq: return a == b;
        case CmpOp::Ne: return a != b;
      }
      break;
    }
    case FormulaKind::Not: return !eval_bool(*f.children[0], env);
    case FormulaKind::And:
      for (const auto& c : f.children)
        if (!eval_bool(*c, env)) return false;
      return true;
    case FormulaKind::Or:
      for (const auto& c : f.children)
        if (eval_bool(*c, env)) return true;
      return false;
    case FormulaKind::Implies:
      return !eval_bool(*f.children[0], env) || eval_bool(*f.children[1], env);
    case FormulaKind::Equiv:
      return eval_bool(*f.children[0], env) == eval_bool(*f.children[1], env);
  }
  throw std::logic_error("eval_bool: unreachable");
}

inline bool eval_bool(const FormulaPtr& f, const Environment& env) { return eval_bool(*f, env); }

// ---------------------------------------------------------------------------
// negation normal form
// ---------------------------------------------------------------------------
//
// Equiv is lowered to the conjunction of both implications first; negation is
// pushed down to comparisons (!(a<=b) -> b<a, !(a<b) -> b<=a, !(a=b) -> a!=b,
// !(a!=b) -> a=b).  The result contains no Not/Implies/Equiv nodes.

inline FormulaPtr to_nnf(const FormulaPtr& f, bool negated = false) {
  switch (f->kind) {
    case FormulaKind::True: return negated ? dsl::bot() : dsl::top();
    case FormulaKind::False: return negated ? dsl::top() : dsl::bot();
    case FormulaKind::Atom: {
      if (!negated) return f;
      switch (f->op) {
        case CmpOp::Le: return dsl::lt(f->rhs, f->lhs);
        case CmpOp::Lt: return dsl::leq(f->rhs, f->lhs);
        case CmpOp::Eq: return dsl::ne(f->lhs, f->rhs);
        case CmpOp::Ne: return dsl::eq(f->lhs, f->rhs);
      }
      break;
    }
    case FormulaKind::Not: return to_nnf(f->children[0], !negated);
    case FormulaKind::And:
    case FormulaKind::Or: {
      bool make_and = (f->kind == FormulaKind::And) != negated;
      std::vector<FormulaPtr> cs;
      cs.reserve(f->children.size());
      for (const auto& c : f->children) cs.push_back(to_nnf(c, negated));
      return dsl::nary(make_and ? FormulaKind::And : FormulaKind::Or, std::move(cs));
    }
    case FormulaKind::Implies: {
      const auto& a = f->children[0];
      const auto& b = f->children[1];
      if (negated) return dsl::land(to_nnf(a, false), to_nnf(b, true));
      return dsl::lor(to_nnf(a, true), to_nnf(b, false));
    }
    case FormulaKind::Equiv: {
      const auto& a = f->children[0];
      const auto& b = f->children[1];
      FormulaPtr lowered = dsl::land(dsl::implies(a, b), dsl::implies(b, a));
      return to_nnf(lowered, negated);
    }
  }
  throw std::logic_error("to_nnf: unreachable");
}

inline bool is_nnf(const Formula& f) {
  switch (f.kind) {
    case FormulaKind::Not:
    case FormulaKind::Implies:
    case FormulaKind::Equiv: return false;
    case FormulaKind::And:
    case FormulaKind::Or:
      for (const auto& c : f.children)
        if (!is_nnf(*c)) return false;
      return true;
    default: return true;
  }
}

// ---------------------------------------------------------------------------
// structural helpers
// ---------------------------------------------------------------------------

template <class Fn>
void visit_terms(const Term& t, Fn&& fn) {
  fn(t);
  if (t.lhs) visit_terms(*t.lhs, fn);
  if (t.rhs) visit_terms(*t.rhs, fn);
  for (const auto& a : t.args) visit_terms(*a, fn);
}

template <class Fn>
void visit_terms(const Formula& f, Fn&& fn) {
  if (f.kind == FormulaKind::Atom) {
    visit_terms(*f.lhs, fn);
    visit_terms(*f.rhs, fn);
  }
  for (const auto& c : f.children) visit_terms(*c, fn);
}

// minimum input/output/target dimensionalities the formula needs
struct DimRequirements {
  int input = 0, output = 0, target = 0;
};

inline DimRequirements required_dims(const Formula& f) {
  DimRequirements d;
  visit_terms(f, [&d](const Term& t) {
    switch (t.kind) {
      case TermKind::Input:
      case TermKind::AnchorInput: d.input = std::max(d.input, t.index + 1); break;
      case TermKind::Output:
      case TermKind::AnchorOutput: d.output = std::max(d.output, t.index + 1); break;
      case TermKind::Target: d.target = std::max(d.target, t.index + 1); break;
      default: break;
    }
  });
  return d;
}

inline bool references_outputs(const Formula& f) {
  bool found = false;
  visit_terms(f, [&found](const Term& t) {
    if (t.kind == TermKind::Output || t.kind == TermKind::AnchorOutput) found = true;
  });
  return found;
}

inline bool term_equal(const Term& a, const Term& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case TermKind::Constant: return a.constant == b.constant;
    case TermKind::Input:
    case TermKind::AnchorInput:
    case TermKind::Output:
    case TermKind::AnchorOutput:
    case TermKind::Target: return a.index == b.index;
    case TermKind::Abs: return term_equal(*a.lhs, *b.lhs);
    case TermKind::Norm: {
      if (a.order != b.order || a.args.size() != b.args.size()) return false;
      for (std::size_t i = 0; i < a.args.size(); ++i)
        if (!term_equal(*a.args[i], *b.args[i])) return false;
      return true;
    }
    default:
      return term_equal(*a.lhs, *b.lhs) && term_equal(*a.rhs, *b.rhs);
  }
}

inline bool formula_equal(const Formula& a, const Formula& b) {
  if (a.kind != b.kind) return false;
  if (a.kind == FormulaKind::Atom)
    return a.op == b.op && term_equal(*a.lhs, *b.lhs) && term_equal(*a.rhs, *b.rhs);
  if (a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i)
    if (!formula_equal(*a.children[i], *b.children[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// s-expression serialization (grammar documented in the README)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace detail

inline void print_term(std::ostream& os, const Term& t) {
  switch (t.kind) {
    case TermKind::Constant: os << detail::format_double(t.constant); return;
    case TermKind::Input: os << "(in " << t.index << ')'; return;
    case TermKind::AnchorInput: os << "(anchor-in " << t.index << ')'; return;
    case TermKind::Output: os << "(out " << t.index << ')'; return;
    case TermKind::AnchorOutput: os << "(anchor-out " << t.index << ')'; return;
    case TermKind::Target: os << "(target " << t.index << ')'; return;
    case TermKind::Add:
    case TermKind::Sub:
    case TermKind::Mul: {
      const char* op = t.kind == TermKind::Add ? "+" : (t.kind == TermKind::Sub ? "-" : "*");
      os << '(' << op << ' ';
      print_term(os, *t.lhs);
      os << ' ';
      print_term(os, *t.rhs);
      os << ')';
      return;
    }
    case TermKind::Abs:
      os << "(abs ";
      print_term(os, *t.lhs);
      os << ')';
      return;
    case TermKind::Norm: {
      os << (t.order == NormOrder::One ? "(norm1" : (t.order == NormOrder::Two ? "(norm2" : "(norminf"));
      for (const auto& a : t.args) {
        os << ' ';
        print_term(os, *a);
      }
      os << ')';
      return;
    }
  }
}

inline void print_formula(std::ostream& os, const Formula& f) {
  switch (f.kind) {
    case FormulaKind::True: os << "true"; return;
    case FormulaKind::False: os << "false"; return;
    case FormulaKind::Atom: {
      const char* op = f.op == CmpOp::Le ? "<=" : (f.op == CmpOp::Lt ? "<" : (f.op == CmpOp::Eq ? "=" : "!="));
      os << '(' << op << ' ';
      print_term(os, *f.lhs);
      os << ' ';
      print_term(os, *f.rhs);
      os << ')';
      return;
    }
    case FormulaKind::Not:
      os << "(not ";
      print_formula(os, *f.children[0]);
      os << ')';
      return;
    case FormulaKind::And:
    case FormulaKind::Or:
    case FormulaKind::Implies:
    case FormulaKind::Equiv: {
      const char* op = f.kind == FormulaKind::And
                           ? "and"
                           : (f.kind == FormulaKind::Or ? "or"
                                                        : (f.kind == FormulaKind::Implies ? "implies" : "equiv"));
      os << '(' << op;
      for (const auto& c : f.children) {
        os << ' ';
        print_formula(os, *c);
      }
      os << ')';
      return;
    }
  }
}

inline std::string to_sexpr(const Term& t) {
  std::ostringstream os;
  print_term(os, t);
  return os.str();
}
inline std::string to_sexpr(const Formula& f) {
  std::ostringstream os;
  print_formula(os, f);
  return os.str();
}
inline std::string to_sexpr(const TermPtr& t) { return to_sexpr(*t); }
inline std::string to_sexpr(const FormulaPtr& f) { return to_sexpr(*f); }

namespace detail {

struct SexprParser {
  std::string_view src;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw std::invalid_argument("formula parse error at offset " + std::to_string(pos) + ": " + msg);
  }

  void skip_ws() {
    while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
  }

  bool at_end() {
    skip_ws();
    return pos >= src.size();
  }

  char peek() {
    skip_ws();
    if (pos >= src.size()) fail("unexpected end of input");
    return src[pos];
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos;
  }

  std::string_view symbol() {
    skip_ws();
    std::size_t start = pos;
    while (pos < src.size() && !std::isspace(static_cast<unsigned char>(src[pos])) && src[pos] != '(' &&
           src[pos] != ')')
      ++pos;
    if (start == pos) fail("expected a symbol");
    return src.substr(start, pos - start);
  }

  int integer() {
    std::string_view s = symbol();
    try {
      return std::stoi(std::string(s));
    } catch (...) {
      fail("expected an integer, got '" + std::string(s) + "'");
    }
    return 0;  // unreachable
  }

  double number(std::string_view s) {
    char* end = nullptr;
    std::string tmp(s);
    double v = std::strtod(tmp.c_str(), &end);
    if (!end || *end != '\0') fail("expected a number, got '" + tmp + "'");
    return v;
  }

  TermPtr term() {
    if (peek() != '(') {
      std::string_view s = symbol();
      return dsl::lit(number(s));
    }
    expect('(');
    std::string_view head = symbol();
    TermPtr result;
    if (head == "in" || head == "anchor-in" || head == "out" || head == "anchor-out" || head == "target") {
      int i = integer();
      if (head == "in") result = dsl::in(i);
      else if (head == "anchor-in") result = dsl::anchor_in(i);
      else if (head == "out") result = dsl::out(i);
      else if (head == "anchor-out") result = dsl::anchor_out(i);
      else result = dsl::target(i);
    } else if (head == "+" || head == "-" || head == "*") {
      TermPtr a = term();
      TermPtr b = term();
      result = head == "+" ? dsl::add(a, b) : (head == "-" ? dsl::sub(a, b) : dsl::mul(a, b));
    } else if (head == "abs") {
      result = dsl::abs(term());
    } else if (head == "norm1" || head == "norm2" || head == "norminf") {
      std::vector<TermPtr> args;
      while (peek() != ')') args.push_back(term());
      NormOrder ord = head == "norm1" ? NormOrder::One : (head == "norm2" ? NormOrder::Two : NormOrder::Inf);
      result = dsl::norm(std::move(args), ord);
    } else {
      fail("unknown term head '" + std::string(head) + "'");
    }
    expect(')');
    return result;
  }

  FormulaPtr formula() {
    if (peek() != '(') {
      std::string_view s = symbol();
      if (s == "true") return dsl::top();
      if (s == "false") return dsl::bot();
      fail("expected a formula, got '" + std::string(s) + "'");
    }
    expect('(');
    std::string_view head = symbol();
    FormulaPtr result;
    if (head == "<=" || head == "<" || head == "=" || head == "!=") {
      TermPtr a = term();
      TermPtr b = term();
      CmpOp op = head == "<=" ? CmpOp::Le : (head == "<" ? CmpOp::Lt : (head == "=" ? CmpOp::Eq : CmpOp::Ne));
      result = dsl::atom(op, a, b);
    } else if (head == "not") {
      result = dsl::lnot(formula());
    } else if (head == "and" || head == "or") {
      std::vector<FormulaPtr> cs;
      while (peek() != ')') cs.push_back(formula());
      result = dsl::nary(head == "and" ? FormulaKind::And : FormulaKind::Or, std::move(cs));
    } else if (head == "implies" || head == "equiv") {
      FormulaPtr a = formula();
      FormulaPtr b = formula();
      result = head == "implies" ? dsl::implies(a, b) : dsl::equiv(a, b);
    } else {
      fail("unknown formula head '" + std::string(head) + "'");
    }
    expect(')');
    return result;
  }
};

}  // namespace detail

inline FormulaPtr parse_formula(std::string_view s) {
  detail::SexprParser p{s};
  FormulaPtr f = p.formula();
  if (!p.at_end()) p.fail("trailing input after formula");
  return f;
}

inline TermPtr parse_term(std::string_view s) {
  detail::SexprParser p{s};
  TermPtr t = p.term();
  if (!p.at_end()) p.fail("trailing input after term");
  return t;
}

}  // namespace proptrain
