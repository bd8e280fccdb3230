#pragma once

// Finite-difference gradient checking that stays meaningful in networks with
// max routing. The losses here are piecewise smooth: wherever a max gate has
// a runner-up within the probe interval, the +-eps evaluations straddle a
// routing switch and no two-sided derivative exists, so comparing against a
// central difference is meaningless at that point (the analytic gradient is a
// valid one-sided derivative). Such components are detected by their
// one-sided slope jump and skipped; every smooth component must still match.
// A genuinely wrong gradient cannot hide this way: the slope probe uses only
// function values, so a bug in backward() never manufactures a kink.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "khpn/tensor.hpp"

namespace khpn::verify {

struct FdProbe {
  double rel_err = 0.0;
  bool kinked = false;  // routing switch inside the probe interval
};

// Checks one component of x against a central difference and classifies
// whether the interval [x-eps, x+eps] crosses a routing switch.
FdProbe fd_probe_component(const std::function<Tensor(const Tensor&)>& f,
                           Tensor& x, int64_t index, double eps);

struct FdSweep {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t kinked = 0;      // skipped components (routing switches)
  int64_t unresolved = 0;  // tensors where the kink budget ran out
  std::string worst;       // "name[index]" of max_rel_err
};

// Probes `per_tensor` random components of every named tensor (all of them
// when a tensor is that small), resampling kinked components a few times.
FdSweep fd_sweep(const std::function<Tensor(const Tensor&)>& f,
                 const std::vector<std::pair<std::string, Tensor>>& params,
                 int64_t per_tensor, double eps, std::mt19937_64& rng);

}  // namespace khpn::verify
