// Learns A-main then B-main with fine-tuning and with EWC at three strengths
// and prints how much of the first task each run keeps.
#include <cstdio>
#include <vector>

#include "seqcl/harness/experiment.hpp"

int main() {
  using namespace seqcl;
  const auto fam = generate_family(7, 0.5, {200, 50, 50});
  const std::vector<TaskDataset> tasks{fam[0], fam[1]};

  const std::vector<std::pair<const char*, double>> runs{{"FT", 0.0}, {"EWC", 10.0}, {"EWC", 1000.0}, {"EWC", 100000.0}};
  for (const auto& [method, lambda] : runs) {
    ExperimentConfig exp;
    exp.method = method;
    exp.hyper.lambda = lambda;
    exp.train.max_epochs = exp.train.patience = 10;
    exp.train.snapshot_count = 3;
    exp.train.warmup_steps = 100;
    exp.train.test_decode = {DecodeMode::CtcGreedy, 1};
    const RunResult r = run_sequence(exp, tasks, 1);
    std::printf("%-4s lambda %-7g A after A %5.1f  A after B %5.1f  B after B %5.1f  BWT %+5.1f  storage %.2f models\n", method,
                lambda, r.R(0, 0), r.R(1, 0), r.R(1, 1), bwt(r.R, 2), r.storage.front().model_equivalents());
  }
}
