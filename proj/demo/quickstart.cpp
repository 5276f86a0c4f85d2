// SPDX-License-Identifier: Apache-2.0
// Minimal tour: train a small net column-partitioned over 4 in-process
// workers, check it against the single-task reference, and print the
// communication accounting for the run.
#include <iostream>

#include "shardgrad/shardgrad.hpp"

int main() {
    using namespace shardgrad;
    const NetworkSpec spec = NetworkSpec::fully_connected({16, 12, 8, 4});
    Rng rng(42);
    const Parameters init = init_params(spec, rng);

    std::vector<Vector> xs, ys;
    for (int i = 0; i < 8; ++i) {
        Vector x(16);
        for (auto& v : x) v = rng.uniform(0.0, 1.0);
        xs.push_back(std::move(x));
        ys.push_back(one_hot(rng.next_below(4), 4));
    }

    OptimizerConfig oc;
    oc.lr = 0.5;
    MpConfig mc;
    mc.ranks = 4;
    MpEngine eng(spec, init, oc, mc);

    Parameters ref = init;
    Optimizer opt(oc);
    for (int step = 0; step < 5; ++step) {
        const double mp_loss = eng.train_step(xs, ys);
        double ref_loss = 0.0;
        const Gradients g = batch_mean_gradients(spec, ref, xs, ys, Loss::CrossEntropy, &ref_loss);
        opt.apply(ref, g.g);
        std::cout << "step " << step << ": loss " << mp_loss << " (reference " << ref_loss
                  << "), param gap " << max_rel_diff(ref, eng.params()) << "\n";
    }

    const MessageStats st = eng.stats();
    CostParams cp;
    cp.b = spec.neuron_counts();
    cp.machines = 4;
    cp.batch_examples = xs.size() * 5;
    std::cout << "transport: " << st.messages << " messages, " << st.data_units
              << " data units\n";
    std::cout << "closed form K: " << cost_breakdown(cp).messages << " messages\n";
    std::cout << reconcile_measured(cp, ExchangeMode::Hypercube, st).describe();
    return 0;
}
