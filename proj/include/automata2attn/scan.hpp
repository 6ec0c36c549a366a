#pragma once

// Doubling prefix scan over an arbitrary monoid, plus the plain left fold it
// is checked against.

#include "common.hpp"

#include <functional>
#include <utility>

namespace a2a {

template <class T>
struct Monoid {
  T identity;
  std::function<T(const T&, const T&)> combine;
};

inline Monoid<Matrix> matrix_product_monoid(Index n) {
  return {Matrix::Identity(n, n), [](const Matrix& a, const Matrix& b) -> Matrix { return a * b; }};
}

template <class T>
std::vector<T> sequential_fold(const Monoid<T>& m, const std::vector<T>& seq) {
  std::vector<T> out;
  out.reserve(seq.size());
  T acc = m.identity;
  for (const auto& x : seq) {
    acc = m.combine(acc, x);
    out.push_back(acc);
  }
  return out;
}

struct ScanStats {
  std::size_t rounds = 0;
  std::size_t padded_length = 0;
};

// Hillis-Steele schedule. The input is left-padded with the identity to the
// next power of two, then in round r every position j >= 2^r becomes
// combine(x[j - 2^r], x[j]). `on_round(r, state)` sees the padded state after
// each round, which is what the WFA compiler's layers are checked against.
template <class T>
std::vector<T> prefix_scan(const Monoid<T>& m, const std::vector<T>& seq, ScanStats* stats = nullptr,
                           const std::function<void(std::size_t, const std::vector<T>&)>& on_round = {}) {
  if (seq.empty()) throw ArgumentError("prefix_scan needs a nonempty sequence");
  const std::size_t n = seq.size();
  const std::size_t padded = next_power_of_two(n);
  const std::size_t pad = padded - n;

  std::vector<T> cur(pad, m.identity);
  cur.insert(cur.end(), seq.begin(), seq.end());
  std::vector<T> next = cur;

  std::size_t rounds = 0;
  for (std::size_t shift = 1; shift < padded; shift <<= 1) {
    // Positions within a round are independent of each other.
    for (std::size_t j = 0; j < padded; ++j) next[j] = j >= shift ? m.combine(cur[j - shift], cur[j]) : cur[j];
    std::swap(cur, next);
    ++rounds;
    if (on_round) on_round(rounds, cur);
  }
  if (stats) *stats = {rounds, padded};
  return std::vector<T>(cur.begin() + static_cast<std::ptrdiff_t>(pad), cur.end());
}

}  // namespace a2a
