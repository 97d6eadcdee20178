#pragma once

#include <string>
#include <vector>

#include "kernelblaze/knowledge_base.hpp"
#include "kernelblaze/rng.hpp"

namespace kblaze::testing {

/// Random schema-valid knowledge base. Gains are drawn on the 6-significant-
/// digit grid the file format stores, so save/load round trips are exact.
inline KnowledgeBase random_kb(Rng& rng, int max_states = 6, int max_opts = 5) {
    const Clock clock = Clock::frozen_at(kFrozenTimestamp);
    KnowledgeBase kb = make_knowledge_base("sim", clock);
    const int n_states = static_cast<int>(rng.below(max_states + 1));
    for (int s = 0; s < n_states; ++s) {
        PerformanceState state;
        state.state_id = "state_" + std::to_string(s) + "_" + std::to_string(rng.below(1000));
        state.display_name = "State " + std::to_string(s);
        const auto& taxonomy = kBottleneckTaxonomy;
        state.primary_bottleneck = std::string(taxonomy[rng.below(taxonomy.size())]);
        if (rng.below(2) == 0) {
            std::string secondary = std::string(taxonomy[rng.below(taxonomy.size())]);
            if (secondary != state.primary_bottleneck) state.secondary_bottleneck = secondary;
        }
        state.description = "generated fixture state";
        const int n_opts = static_cast<int>(rng.below(max_opts + 1));
        for (int o = 0; o < n_opts; ++o) {
            OptimizationEntry opt;
            opt.opt_id = "opt_" + std::to_string(o);
            opt.name = "Optimization " + std::to_string(o);
            opt.description = "generated fixture entry";
            opt.predicted_gain = static_cast<double>(1 + rng.below(9999)) / 1000.0; // 0.001..9.999
            opt.observation_count = static_cast<std::int64_t>(rng.below(50));
            opt.success_count = static_cast<std::int64_t>(rng.below(opt.observation_count + 1));
            opt.last_updated_iteration = static_cast<std::int64_t>(rng.below(20));
            state.optimizations.push_back(std::move(opt));
        }
        add_state(kb, std::move(state), clock);
    }
    return kb;
}

inline bool kb_equal(const KnowledgeBase& a, const KnowledgeBase& b) {
    return kb_to_json_string(a) == kb_to_json_string(b);
}

} // namespace kblaze::testing
