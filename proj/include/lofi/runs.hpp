#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lofi/model.hpp"

namespace lofi {

// Command-level entry points behind the CLI and the C API. Each takes a
// JSON run config (unknown keys rejected), writes its outputs and returns
// a JSON summary. Errors are thrown as lofi::Error.
nlohmann::json run_simulate(const nlohmann::json& config);
nlohmann::json run_train(const nlohmann::json& config);
nlohmann::json run_infer(const nlohmann::json& config);
nlohmann::json run_admm(const nlohmann::json& config);
nlohmann::json run_eval(const nlohmann::json& config);
nlohmann::json run_bench(const nlohmann::json& config);
nlohmann::json run_trace(const nlohmann::json& config);

// Dispatches on the subcommand name (simulate, train, infer, admm, eval,
// bench, ccpg-trace).
nlohmann::json run_command(const std::string& command, const nlohmann::json& config);

struct DatasetItem {
  std::string name;
  std::filesystem::path obs;
  std::filesystem::path gt;
};

// Items listed in manifest.json, or every *_obs.lft with a matching
// *_gt.lft when there is no manifest.
std::vector<DatasetItem> list_dataset(const std::filesystem::path& dir);
std::vector<TrainPair> load_pairs(const std::vector<DatasetItem>& items);

}  // namespace lofi
