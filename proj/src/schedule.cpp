#include <cmath>
#include <numbers>

#include "moa/errors.hpp"
#include "moa/train.hpp"

namespace moa {

std::string_view name(Schedule schedule) noexcept { return schedule == Schedule::Cos ? "cos" : "wsd"; }

Schedule schedule_from_name(std::string_view n) {
  if (n == "cos") return Schedule::Cos;
  if (n == "wsd") return Schedule::Wsd;
  throw ConfigError("unknown schedule '" + std::string(n) + "' (expected cos or wsd)");
}

std::size_t wsd_decay_start(const TrainConfig& config) { return (config.total_steps * 4) / 5; }

double lr_at(const TrainConfig& config, std::size_t step) {
  const std::size_t total = config.total_steps, warmup = config.warmup_steps;
  if (step > total) throw ContractError("step " + std::to_string(step) + " beyond total_steps " + std::to_string(total));
  const double max_lr = config.max_lr;
  if (step < warmup) return max_lr * static_cast<double>(step) / static_cast<double>(warmup);

  if (config.schedule == Schedule::Cos) {
    const double min_lr = max_lr / 20.0;
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return min_lr + (max_lr - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
  const std::size_t decay = wsd_decay_start(config);
  if (step <= decay) return max_lr;
  return max_lr * static_cast<double>(total - step) / static_cast<double>(total - decay);
}

}  // namespace moa
