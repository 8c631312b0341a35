#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "orderlab/common.hpp"
#include "orderlab/rng.hpp"

namespace orderlab {

// A training order: order[t] is the index of the batch trained at position t.
struct Permutation {
  std::vector<uint32_t> order;

  Permutation() = default;
  explicit Permutation(std::vector<uint32_t> o) : order(std::move(o)) { validate(); }

  size_t size() const { return order.size(); }
  uint32_t operator[](size_t t) const { return order[t]; }

  void validate() const {
    std::vector<bool> seen(order.size(), false);
    for (uint32_t v : order) {
      if (v >= order.size() || seen[v])
        throw InputError("Permutation: not a bijection over 0.." +
                         std::to_string(order.size() ? order.size() - 1 : 0));
      seen[v] = true;
    }
  }

  bool is_identity() const {
    for (size_t t = 0; t < order.size(); ++t)
      if (order[t] != t) return false;
    return true;
  }

  static Permutation identity(size_t t_batches) {
    Permutation p;
    p.order.resize(t_batches);
    std::iota(p.order.begin(), p.order.end(), 0u);
    return p;
  }

  static Permutation random(size_t t_batches, Rng& rng) {
    Permutation p = identity(t_batches);
    rng.shuffle(p.order);
    return p;
  }

  // Pin batch `b` at position `pos`, shuffle the rest (Fisher-Yates over the
  // non-pinned positions).
  static Permutation pinned_shuffle(size_t t_batches, uint32_t b, size_t pos, Rng& rng) {
    if (b >= t_batches || pos >= t_batches)
      throw InputError("pinned_shuffle: batch/position out of range");
    std::vector<uint32_t> rest;
    rest.reserve(t_batches - 1);
    for (uint32_t i = 0; i < t_batches; ++i)
      if (i != b) rest.push_back(i);
    rng.shuffle(rest);
    Permutation p;
    p.order.resize(t_batches);
    size_t j = 0;
    for (size_t t = 0; t < t_batches; ++t) p.order[t] = (t == pos) ? b : rest[j++];
    p.validate();
    return p;
  }

  Permutation inverse() const {
    Permutation inv;
    inv.order.resize(order.size());
    for (size_t t = 0; t < order.size(); ++t) inv.order[order[t]] = static_cast<uint32_t>(t);
    return inv;
  }

  uint64_t digest() const {
    return fnv1a64(order.data(), order.size() * sizeof(uint32_t));
  }

  std::string to_string() const {
    std::string s;
    for (size_t t = 0; t < order.size(); ++t) {
      if (t) s += ',';
      s += std::to_string(order[t]);
    }
    return s;
  }

  static Permutation parse(const std::string& csv) {
    Permutation p;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      size_t pos = 0;
      long v = -1;
      try {
        v = std::stol(item, &pos);
      } catch (const std::exception&) {
        throw InputError("Permutation: cannot parse '" + item + "'");
      }
      while (pos < item.size() && std::isspace(static_cast<unsigned char>(item[pos]))) ++pos;
      if (pos != item.size() || v < 0)
        throw InputError("Permutation: cannot parse '" + item + "'");
      p.order.push_back(static_cast<uint32_t>(v));
    }
    if (p.order.empty()) throw InputError("Permutation: empty permutation string");
    p.validate();
    return p;
  }
};

}  // namespace orderlab
