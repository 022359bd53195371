#include "sdb/schedule.hpp"

#include "sdb/errors.hpp"

namespace sdb {

Schedule Schedule::preset120() { return Schedule{}; }

Schedule Schedule::preset150() {
  Schedule s;
  s.warmup_epochs = 40;
  s.decay1_epoch = 100;
  s.decay2_epoch = 125;
  s.total_epochs = 150;
  return s;
}

void Schedule::validate() const {
  if (!(base_lr > 0 && peak_lr > 0 && decay1_lr > 0 && decay2_lr > 0))
    throw ConfigError("schedule", "learning rates must be positive");
  if (!(warmup_epochs >= 0 && warmup_epochs < decay1_epoch && decay1_epoch < decay2_epoch &&
        decay2_epoch < total_epochs))
    throw ConfigError("schedule", "need warmup_epochs < decay1_epoch < decay2_epoch < total_epochs");
}

double lr_at(double epoch, const Schedule& s) {
  if (epoch > s.decay2_epoch) return s.decay2_lr;
  if (epoch > s.decay1_epoch) return s.decay1_lr;
  if (epoch >= s.warmup_epochs) return s.peak_lr;
  if (epoch <= 0) return s.base_lr;
  return s.base_lr + (epoch / s.warmup_epochs) * (s.peak_lr - s.base_lr);
}

}  // namespace sdb
