#ifndef SDB_SCHEDULE_HPP_
#define SDB_SCHEDULE_HPP_

namespace sdb {

// Linear warm-up from base_lr to peak_lr, then two step decays. Decay
// boundaries are exclusive: "after 40 epochs" means epochs > 40 are decayed.
struct Schedule {
  double base_lr = 3.5e-5;
  double peak_lr = 3.5e-4;
  double warmup_epochs = 10;
  double decay1_epoch = 40;
  double decay1_lr = 3.5e-5;
  double decay2_epoch = 65;
  double decay2_lr = 3.5e-6;
  int total_epochs = 120;

  static Schedule preset120();
  static Schedule preset150();

  void validate() const;
};

double lr_at(double epoch, const Schedule& s);

}  // namespace sdb

#endif  // SDB_SCHEDULE_HPP_
