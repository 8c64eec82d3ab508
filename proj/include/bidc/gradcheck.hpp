#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bidc/autograd.hpp"

namespace bidc {

struct NamedParam {
    std::string name;
    NodePtr node;
};

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t kink_skipped = 0;  // |p| < 10*eps positions, excluded
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst_rel_err = 0.0;
    std::string worst_param;
    bool pass = true;
    double eps = 0.0;
    double tol = 0.0;
};

/// Central-difference check of a deterministic scalar function against the
/// analytic gradients produced by backward(). rel err = |a - n| /
/// max(1e-8, |a| + |n|). Kink policy: parameter elements within 10*eps of
/// zero are skipped, as are elements for which any relu activation changes
/// sign within 100*eps of the base point (finite differences are invalid
/// across a kink and curvature-polluted near one); both count as
/// kink_skipped per entry.
GradCheckReport grad_check(const std::function<NodePtr()>& f, std::vector<NamedParam> params,
                           double eps = 1e-5, double tol = 1e-4);

std::string render_report(const GradCheckReport& report);

}  // namespace bidc
