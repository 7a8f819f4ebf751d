#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tgd/image.hpp"
#include "tgd/score_model.hpp"
#include "tgd/trainer.hpp"

namespace tgd::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

/// Runs the `tgd` command line; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int main(int argc, char** argv);

/// A simulated (or user-supplied) micrograph with whatever ground truth sits next to it.
struct DatasetItem {
  std::string id;
  std::filesystem::path noisy;
  std::filesystem::path clean;   // empty when absent
  std::filesystem::path coords;  // empty when absent
};

/// `dir/noisy.mrc`, `dir/<sub>/noisy.mrc`, or every *.mrc in `dir`; a file path yields one item.
std::vector<DatasetItem> discover_dataset(const std::filesystem::path& path);

/// Training configuration file: TrainingSchedule keys plus base_width, channel_multipliers, feature_sigma.
struct RunConfig {
  TrainingSchedule schedule;
  ScoreModelConfig model;
};
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
/// Desk-scale defaults used when no configuration file is given.
RunConfig desk_run_config();

}  // namespace tgd::cli
