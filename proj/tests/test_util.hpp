#pragma once

#include <utility>

#include "birdrone/gradcheck.hpp"

namespace brd {

// Shorthand for tests that only care about the worst relative error.
template <typename T, typename Fn>
double gradcheck_fn(Tensor<T>& x, Fn&& fn, double eps = 1e-5, std::size_t max_coords = 0) {
    return gradcheck(x, std::forward<Fn>(fn), eps, max_coords).max_err;
}

}  // namespace brd
