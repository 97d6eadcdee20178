#pragma once

#include <memory>
#include <string>
#include <vector>

#include "kernelblaze/icrl.hpp"
#include "kernelblaze/simenv.hpp"

namespace kblaze {

/// Lowering provider for the simulated environment: synthetic variants are
/// op manifests, so lowering is mechanical and repair feedback cannot change
/// the result.
class SimLowering final : public LoweringProvider {
public:
    explicit SimLowering(const SimBackend& backend) : backend_(backend) {}

    Variant lower(const TaskSpec& task, const Variant& current, const OptimizationEntry& opt,
                  const ProfileReport& report, const std::string& feedback,
                  TokenCounter* tokens) override {
        (void)report;
        (void)feedback;
        (void)tokens;
        return backend_.lower(task, current, opt.name);
    }

private:
    const SimBackend& backend_;
};

/// Bundles the pieces a simulated run needs so call sites keep one object
/// alive for the whole run.
struct SimEngine {
    std::unique_ptr<SimBackend> backend;
    std::unique_ptr<SimLowering> lowering;
    std::vector<TaskSpec> task_specs;

    explicit SimEngine(std::vector<SyntheticTask> tasks) {
        std::vector<std::string> ids;
        ids.reserve(tasks.size());
        for (const auto& task : tasks) ids.push_back(task.task_id);
        backend = std::make_unique<SimBackend>(std::move(tasks));
        lowering = std::make_unique<SimLowering>(*backend);
        for (const auto& id : ids) task_specs.push_back(backend->task_spec(id));
    }

    RolloutContext context(const IcrlConfig& config, Agent* agent = nullptr,
                           Agent* soft_verifier = nullptr) {
        return RolloutContext{*backend, *lowering, agent, soft_verifier, config};
    }
};

} // namespace kblaze
