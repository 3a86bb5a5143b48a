// Fits the basic and the augmented synthetic control for one building of a
// generated panel and compares their event-window errors with a moving average.
#include <iostream>

#include "synthbase/synthbase.hpp"

int main() {
    using namespace synthbase;
    demo::DemoOptions opt;
    opt.buildings = 12;
    opt.days = 140;
    const auto p = demo::make_demo_panel(opt);
    const std::string treated = p.buildings.front();

    eval::MethodSettings s;
    for (auto m : {eval::Method::MovingAverage, eval::Method::ScmS1R, eval::Method::ScmAugDpast}) {
        const auto cell = eval::evaluate_cell(p, treated, m, s);
        std::cout << cell.method << ": event MSE " << cell.mse;
        if (cell.weights) std::cout << ", donors to 80% " << cell.weights->donors_to_80pct;
        std::cout << '\n';
    }

    const auto fit = eval::fit_linear(p, treated, eval::Method::ScmS1R, s);
    std::cout << "donor weights:";
    const Eigen::VectorXd w = fit.weights.donor_coefficients();
    for (Eigen::Index j = 0; j < w.size(); ++j) std::cout << ' ' << w(j);
    std::cout << "\nsum " << w.sum() << '\n';
}
