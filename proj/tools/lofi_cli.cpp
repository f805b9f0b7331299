#include <algorithm>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lofi/lofi.h"

using nlohmann::json;

namespace {

struct Failure {
  std::string code;
  std::string message;
};

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (c == '\n' || c == '\r') {
      out += ' ';
    } else {
      out += c;
    }
  }
  return out + "\"";
}

int report(const std::string& command, const Failure& f, int exit_code) {
  std::fprintf(stderr, "error code=%s command=%s message=%s\n", f.code.c_str(),
               command.empty() ? "none" : command.c_str(), quote(f.message).c_str());
  return exit_code;
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw Failure{"io", "cannot open config " + path};
  try {
    json j = json::parse(is);
    if (!j.is_object()) throw Failure{"config", "config root must be a JSON object"};
    return j;
  } catch (const json::exception& e) {
    throw Failure{"config", "config " + path + " is not valid JSON: " + e.what()};
  }
}

// key=value with a dotted key; the value is parsed as JSON when possible
// and taken as a string otherwise.
void apply_set(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Failure{"config", "--set expects key=value: " + assignment};
  const std::string value_text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(value_text);
  } catch (const json::exception&) {
    value = value_text;
  }
  json* node = &cfg;
  std::stringstream keys(assignment.substr(0, eq));
  std::string key;
  std::vector<std::string> parts;
  while (std::getline(keys, key, '.')) parts.push_back(key);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    json& child = (*node)[parts[i]];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw Failure{"config", "--set path crosses a non-object at " + parts[i]};
    node = &child;
  }
  (*node)[parts.back()] = value;
}

struct Overrides {
  std::vector<std::pair<std::string, json>> values;

  template <class V>
  void add(const std::string& key, const std::optional<V>& v) {
    if (v) values.emplace_back(key, *v);
  }
};

void apply_path(json& cfg, const std::string& dotted, const json& value) {
  apply_set(cfg, dotted + "=" + value.dump());
}

std::optional<std::uint64_t> env_seed() {
  const char* text = std::getenv("LOFI_SEED");
  if (!text || !*text) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(text, &end, 10);
  if (errno != 0 || *end != '\0' || text[0] == '-') {
    throw Failure{"config", std::string("LOFI_SEED is not an unsigned integer: ") + text};
  }
  return v;
}

void set_seed(json& cfg, const std::string& command, std::uint64_t seed) {
  cfg["seed"] = seed;
  if (command == "train" || command == "bench") {
    for (const char* section : {"model", "train"}) {
      if (!cfg.contains(section)) cfg[section] = json::object();
      if (cfg[section].is_object()) cfg[section]["seed"] = seed;
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local Fourier patch networks for image reconstruction"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(lofi_version()));

  struct Common {
    std::string config;
    std::optional<int> threads;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> sets;
  };
  Common common;
  Overrides ov;

  std::optional<std::string> task, output, data, val_data, resume, checkpoint, input,
      measurements, mask, ground_truth, csv, phantom;
  std::optional<int> count, size, height, width, epochs, max_steps, iterations, steps,
      pixel_batch, angles;
  std::optional<double> scale, alpha, noise_sigma, snr_db;
  std::vector<int> resolutions;
  std::vector<std::string> pixels;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "JSON run config");
    sub->add_option("--threads", common.threads, "Worker threads (default: core count; 1 is deterministic)")
        ->check(CLI::PositiveNumber);
    sub->add_option("--seed", common.seed, "Seed (overrides LOFI_SEED and the config)");
    sub->add_option("--set", common.sets, "Override a config key: dotted.key=json");
  };

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  add_common(sim);
  sim->add_option("--task", task, "denoise|ldct|ks|inpaint|radio|transpose-toy");
  sim->add_option("--output", output, "Output directory");
  sim->add_option("--count", count, "Number of pairs");
  sim->add_option("--size", size, "Image side");
  sim->add_option("--phantom", phantom, "ellipses|blobs|texture");
  sim->add_option("--noise-sigma", noise_sigma, "Noise standard deviation");
  sim->add_option("--snr-db", snr_db, "Measurement SNR in dB");
  sim->add_option("--angles", angles, "Projection angles (ldct)");

  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train);
  train->add_option("--data", data, "Training dataset directory");
  train->add_option("--val-data", val_data, "Validation dataset directory");
  train->add_option("--output", output, "Run directory");
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_option("--epochs", epochs, "Epochs");
  train->add_option("--max-steps", max_steps, "Stop after this many steps");
  train->add_option("--pixel-batch", pixel_batch, "Pixels per object per step");

  auto* infer = app.add_subcommand("infer", "Reconstruct one observation");
  add_common(infer);
  infer->add_option("--checkpoint", checkpoint, "Model checkpoint");
  infer->add_option("--input", input, "Observation (.lft or .png)");
  infer->add_option("--output", output, "Output stem");
  infer->add_option("--height", height, "Output height");
  infer->add_option("--width", width, "Output width");
  infer->add_option("--scale", scale, "Output scale relative to the input");
  infer->add_option("--pixel-batch", pixel_batch, "Pixels per evaluation chunk");

  auto* admm = app.add_subcommand("admm", "Plug-and-play ADMM reconstruction");
  add_common(admm);
  admm->add_option("--checkpoint", checkpoint, "Denoiser checkpoint (identity if omitted)");
  admm->add_option("--task", task, "denoise|ldct|ks|inpaint|radio");
  admm->add_option("--measurements", measurements, "Measurement tensor");
  admm->add_option("--mask", mask, "Pixel or frequency mask");
  admm->add_option("--ground-truth", ground_truth, "Reference for PSNR tracking");
  admm->add_option("--output", output, "Output directory");
  admm->add_option("--alpha", alpha, "Penalty parameter");
  admm->add_option("--iterations", iterations, "Iterations");
  admm->add_option("--pixel-batch", pixel_batch, "Pixels per evaluation chunk");

  auto* eval = app.add_subcommand("eval", "PSNR and SSIM report");
  add_common(eval);
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint");
  eval->add_option("--data", data, "Dataset directory");
  eval->add_option("--csv", csv, "Write per-image rows here");

  auto* bench = app.add_subcommand("bench", "Training memory and time across resolutions");
  add_common(bench);
  bench->add_option("--resolutions", resolutions, "Image sides")->delimiter(',');
  bench->add_option("--steps", steps, "Timed steps per resolution");
  bench->add_option("--output", output, "CSV report");

  auto* trace = app.add_subcommand("ccpg-trace", "Dump refined patch geometry");
  add_common(trace);
  trace->add_option("--checkpoint", checkpoint, "Model checkpoint");
  trace->add_option("--input", input, "Observation");
  trace->add_option("--pixel", pixels, "Query pixel as row,col (repeatable)");
  trace->add_option("--output", output, "Output stem");

  std::string command;
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    for (auto* sub : app.get_subcommands()) command = sub->get_name();
    return report(command, {"usage", e.what()}, 2);
  }
  command = app.get_subcommands().front()->get_name();

  try {
    json cfg = load_config(common.config);
    ov.add("task", task);
    ov.add("output", output);
    ov.add("data", data);
    ov.add("val_data", val_data);
    ov.add("resume", resume);
    ov.add("checkpoint", checkpoint);
    ov.add("input", input);
    ov.add("measurements", measurements);
    ov.add("mask", mask);
    ov.add("ground_truth", ground_truth);
    ov.add("csv", csv);
    ov.add("phantom", phantom);
    ov.add("count", count);
    ov.add("size", size);
    ov.add("height", height);
    ov.add("width", width);
    ov.add("train.epochs", epochs);
    ov.add("train.max_steps", max_steps);
    ov.add("iterations", iterations);
    ov.add("steps", steps);
    ov.add("angles", angles);
    ov.add("scale", scale);
    ov.add("alpha", alpha);
    ov.add("noise_sigma", noise_sigma);
    ov.add("snr_db", snr_db);
    if (pixel_batch) ov.values.emplace_back(command == "train" ? "train.pixel_batch" : "pixel_batch", *pixel_batch);
    if (!resolutions.empty()) ov.values.emplace_back("resolutions", resolutions);
    if (!pixels.empty()) {
      json list = json::array();
      for (const auto& p : pixels) {
        int r = 0;
        int c = 0;
        char tail = 0;
        if (std::sscanf(p.c_str(), "%d,%d%c", &r, &c, &tail) != 2) {
          throw Failure{"usage", "--pixel expects row,col: " + p};
        }
        list.push_back({r, c});
      }
      ov.values.emplace_back("pixels", list);
    }
    for (const auto& [key, value] : ov.values) apply_path(cfg, key, value);
    for (const auto& s : common.sets) apply_set(cfg, s);

    if (const auto seed = env_seed()) set_seed(cfg, command, *seed);
    if (common.seed) set_seed(cfg, command, *common.seed);
    if (common.threads) {
      cfg["threads"] = *common.threads;
    } else if (!cfg.contains("threads")) {
      cfg["threads"] = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    }

    char* summary = nullptr;
    const lofi_status status = lofi_run(command.c_str(), cfg.dump().c_str(), &summary);
    if (status != LOFI_OK) {
      return report(command, {lofi_status_name(status), lofi_last_error()},
                    static_cast<int>(status));
    }
    std::printf("%s\n", summary ? summary : "{}");
    lofi_string_free(summary);
    return 0;
  } catch (const Failure& f) {
    return report(command, f, f.code == "usage" ? 2 : static_cast<int>(LOFI_CONFIG));
  } catch (const std::exception& e) {
    return report(command, {"internal", e.what()}, static_cast<int>(LOFI_INTERNAL));
  }
}
