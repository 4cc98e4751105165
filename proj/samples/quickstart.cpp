// Pretrain a small model on synthetic monthly data, forecast with intervals, benchmark it.

#include "tgpt/tgpt.hpp"

#include <iostream>

using namespace tgpt;

int main() {
    const auto source = synthetic::family_dataset(synthetic::FamilyParams{}, 300, 72, 1);
    const auto target = synthetic::family_dataset(synthetic::FamilyParams{}, 50, 60, 2);

    auto config = model::ModelConfig::defaults_for(Frequency::monthly());
    config.input_length = 36;
    config.d_model = 32;
    config.n_heads = 4;
    config.n_encoder_layers = 1;
    config.n_decoder_layers = 1;
    config.ff_dim = 64;
    config.dropout = 0.0;

    training::TrainConfig train;
    train.steps = 400;
    train.batch_size = 64;
    train.lr0 = 1e-3;
    const auto result = training::pretrain(source, config, train);
    std::cout << "trained " << result.weights.parameter_count() << " parameters for " << result.trace.size() << " steps\n";

    const auto forecaster = model::as_forecaster(result.weights, config);
    const auto iv = conformal::forecast_with_intervals(forecaster, target[0], 12, {80, 95}, 3);
    std::cout << target[0].id() << ":\n";
    for (std::size_t j = 0; j < iv.point.values.size(); ++j)
        std::cout << "  " << target[0].timestamp_at(static_cast<std::int64_t>(target[0].size() + j)) << "  "
                  << iv.point.values[j] << "  [" << iv.lo[0][j] << ", " << iv.hi[0][j] << "]\n";

    const auto report = eval::run_benchmark(target, {eval::tgpt_model(result.weights, config), eval::baseline_model("theta", 12),
                                                     eval::baseline_model("histavg", 12), eval::baseline_model("snaive", 12)});
    std::cout << eval::render_report(report, eval::ReportFormat::Text);
}
