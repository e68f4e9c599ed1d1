// Copyright 2026 The Splitformer C++ Authors
//
// Licensed under the Apache License, Version 2.0

#include "splitformer/grad_check.hpp"

#include <cmath>
#include <cstdlib>

namespace splitformer {

double grad_check(const GraphBuilder& f, const std::vector<TensorD>& point,
                  double perturbation) {
    // Fresh leaf copies so the caller's tensors stay untouched.
    std::vector<TensorD> params;
    params.reserve(point.size());
    for (const auto& p : point) {
        std::vector<double> data(p.data().begin(), p.data().end());
        params.push_back(TensorD::from_data(p.shape(), std::move(data), true));
    }

    TensorD loss = f(params);
    backward(loss);

    double max_err = 0.0;
    for (auto& p : params) {
        auto values = p.data_mut();
        for (size_t j = 0; j < values.size(); ++j) {
            double saved = values[j];
            double fp, fm;
            {
                NoGradGuard ng;
                values[j] = saved + perturbation;
                fp = f(params).item();
                values[j] = saved - perturbation;
                fm = f(params).item();
            }
            values[j] = saved;
            double central = (fp - fm) / (2.0 * perturbation);
            double tape = p.has_grad() ? p.grad()[j] : 0.0;
            double err = std::abs(tape - central) / (std::abs(central) + kGradCheckFloor);
            if (err > max_err) max_err = err;
        }
    }
    return max_err;
}

}  // namespace splitformer
