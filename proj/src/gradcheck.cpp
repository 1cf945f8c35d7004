#include "dygex/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dygex/errors.hpp"

namespace dygex {

double finite_diff_max_rel_err(const std::function<double(const std::vector<Tensor>&)>& loss_fn,
                               std::vector<Tensor> params,
                               const std::vector<Tensor>& analytic_grads, double step) {
    if (params.size() != analytic_grads.size())
        throw ShapeError("finite_diff_max_rel_err: gradient count does not match parameters");
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].same_shape(analytic_grads[p]))
            throw ShapeError("finite_diff_max_rel_err: gradient shape " +
                             analytic_grads[p].shape_str() + " does not match parameter " +
                             params[p].shape_str());
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double saved = params[p][i];
            params[p][i] = saved + step;
            const double up = loss_fn(params);
            params[p][i] = saved - step;
            const double down = loss_fn(params);
            params[p][i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double err = std::abs(analytic_grads[p][i] - numeric) /
                               std::max(1.0, std::abs(numeric));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace dygex
