#include "lofi/runs.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "json_util.hpp"
#include "lofi/admm.hpp"
#include "lofi/error.hpp"
#include "lofi/forward_ops.hpp"
#include "lofi/memprobe.hpp"
#include "lofi/metrics.hpp"
#include "lofi/parallel.hpp"
#include "lofi/phantoms.hpp"
#include "lofi/tensor_io.hpp"

namespace lofi {

using nlohmann::json;
using detail::get_or;
using detail::get_required;
using detail::reject_unknown;
namespace fs = std::filesystem;

namespace {

const char* const kTasks[] = {"denoise", "ldct", "ks", "inpaint", "radio", "transpose-toy"};

std::string require_task(const std::string& task) {
  for (const char* t : kTasks) {
    if (task == t) return task;
  }
  throw Error(ErrorCode::Config,
              "unknown task '" + task + "' (denoise|ldct|ks|inpaint|radio|transpose-toy)");
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os || !(os << text)) throw Error(ErrorCode::Io, "cannot write " + path.string());
}

json read_json_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Io, "cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Corrupt, path.string() + " is not valid JSON: " + e.what());
  }
}

// Writes <stem>.lft and a PNG preview (clipped to [0, 1] for natural
// images, min/max scaled otherwise).
void save_outputs(const fs::path& stem, const GridImage& img) {
  save_tensor(stem.string() + ".lft", tensor_from_image(img));
  GridImage preview = img;
  if (preview.channels() == 2) preview = preview.channel(0);
  const auto [lo, hi] = std::minmax_element(preview.data().begin(), preview.data().end());
  if (*lo >= -0.5 && *hi <= 1.5) {
    save_png(stem.string() + ".png", preview, 0.0, 1.0);
  } else {
    save_png_autoscale(stem.string() + ".png", preview);
  }
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

json number_or_inf(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : "-inf";
}

std::string item_name(int i) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << i;
  return os.str();
}

void resolve_seed(json& cfg) {
  if (!cfg.contains("seed")) cfg["seed"] = 0;
}

// Runs fn(model) with a checkpoint loaded at its stored precision.
template <class Fn>
auto with_checkpoint(const fs::path& path, Fn&& fn) {
  const LofiConfig cfg = read_checkpoint_config(path);
  if (cfg.precision == Precision::F64) {
    LofiModel<double> model = load_checkpoint<double>(path);
    return fn(model);
  }
  LofiModel<float> model = load_checkpoint<float>(path);
  return fn(model);
}

GridImage simulate_phantom(PhantomKind kind, int size, Rng& rng, bool disk) {
  GridImage img = phantom_gen(kind, size, rng);
  if (kind == PhantomKind::Blobs && disk) {
    // CT-style blobs: map the zero-mean field into [0, 1].
    for (auto& v : img.data()) v = std::clamp(0.5 + 0.15 * v, 0.0, 1.0);
  }
  if (disk) {
    const GridImage mask = disk_mask(size);
    for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] *= mask.data()[i];
  }
  return img;
}

}  // namespace

std::vector<DatasetItem> list_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "dataset directory not found: " + dir.string());
  std::vector<DatasetItem> items;
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    const json m = read_json_file(manifest);
    if (!m.contains("items") || !m.at("items").is_array()) {
      throw Error(ErrorCode::Corrupt, "manifest has no items array");
    }
    for (const auto& it : m.at("items")) {
      items.push_back({get_required<std::string>(it, "name"), dir / get_required<std::string>(it, "obs"),
                       dir / get_required<std::string>(it, "gt")});
    }
  } else {
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string file = entry.path().filename().string();
      const std::string suffix = "_obs.lft";
      if (file.size() <= suffix.size() || file.compare(file.size() - suffix.size(), suffix.size(), suffix) != 0) {
        continue;
      }
      const std::string name = file.substr(0, file.size() - suffix.size());
      const fs::path gt = dir / (name + "_gt.lft");
      if (fs::exists(gt)) items.push_back({name, entry.path(), gt});
    }
    std::sort(items.begin(), items.end(),
              [](const DatasetItem& a, const DatasetItem& b) { return a.name < b.name; });
  }
  if (items.empty()) throw Error(ErrorCode::InvalidInput, "dataset " + dir.string() + " is empty");
  return items;
}

std::vector<TrainPair> load_pairs(const std::vector<DatasetItem>& items) {
  std::vector<TrainPair> pairs;
  pairs.reserve(items.size());
  for (const auto& it : items) pairs.push_back({load_image(it.obs), load_image(it.gt)});
  return pairs;
}

json run_simulate(const json& in) {
  json cfg = in;
  reject_unknown(cfg,
                 {"task", "output", "count", "size", "seed", "phantom", "noise_sigma", "snr_db",
                  "angles", "fbp_filter", "mask_p", "uv_tracks", "sigma_e", "theta_arcmin",
                  "n_gal", "kappa_std", "threads"},
                 "simulate config");
  resolve_seed(cfg);
  const std::string task = require_task(get_required<std::string>(cfg, "task"));
  const fs::path out = get_required<std::string>(cfg, "output");
  const int count = get_or(cfg, "count", 8);
  const int size = get_or(cfg, "size", 128);
  const auto seed = get_or<std::uint64_t>(cfg, "seed", 0);
  if (count < 1 || size < 2) throw Error(ErrorCode::Config, "count and size must be positive");
  const std::string default_kind = task == "ldct" || task == "radio" ? "ellipses"
                                   : task == "ks"                    ? "blobs"
                                                                     : "texture";
  const std::string kind_name = get_or<std::string>(cfg, "phantom", default_kind);
  const PhantomKind kind = parse_phantom_kind(kind_name);
  make_dirs(out);
  Rng rng(seed);

  json manifest{{"task", task}, {"count", count}, {"size", size}, {"seed", seed}, {"phantom", kind_name}};
  json noise;
  json op;
  std::unique_ptr<LinearOperator> shared_op;
  std::vector<double> angles;
  FbpFilter fbp_filter = FbpFilter::Ramp;
  double ks_sigma = 0.0;
  if (task == "denoise") {
    noise = {{"sigma", get_or(cfg, "noise_sigma", 0.15)}};
  } else if (task == "ldct") {
    angles = uniform_angles(get_or(cfg, "angles", 180));
    const std::string f = get_or<std::string>(cfg, "fbp_filter", "ramp");
    if (f != "ramp" && f != "hann") throw Error(ErrorCode::Config, "fbp_filter must be ramp|hann");
    fbp_filter = f == "hann" ? FbpFilter::Hann : FbpFilter::Ramp;
    noise = {{"snr_db", get_or(cfg, "snr_db", 30.0)}, {"applied_to", "sinogram"}};
    op = {{"kind", "radon"}, {"angles", angles.size()}, {"fbp_filter", f}};
  } else if (task == "ks") {
    const double sigma_e = get_or(cfg, "sigma_e", 0.37);
    const double theta = get_or(cfg, "theta_arcmin", 300.0);
    const double n_gal = get_or(cfg, "n_gal", 30.0);
    ks_sigma = ks_noise_sigma(sigma_e, theta, size, n_gal);
    noise = {{"sigma", ks_sigma}, {"sigma_e", sigma_e}, {"theta_arcmin", theta}, {"n_gal", n_gal}};
    op = {{"kind", "kaiser_squires"}, {"kappa_std", get_or(cfg, "kappa_std", 0.05)}};
  } else if (task == "inpaint") {
    noise = {{"sigma", get_or(cfg, "noise_sigma", 0.0)}};
    op = {{"kind", "inpaint"}, {"p", get_or(cfg, "mask_p", 0.3)}};
  } else if (task == "radio") {
    const int tracks = get_or(cfg, "uv_tracks", 12);
    GridImage mask = uv_mask_gen(size, tracks, rng);
    save_tensor(out / "uv_mask.lft", tensor_from_image(mask));
    op = {{"kind", "fourier_mask"}, {"tracks", tracks}, {"coverage", mask_coverage(mask)},
          {"mask", "uv_mask.lft"}};
    shared_op = std::make_unique<FourierMaskOp>(std::move(mask));
    noise = {{"snr_db", get_or(cfg, "snr_db", 30.0)}};
  }
  manifest["noise"] = noise;
  manifest["operator"] = op;

  json items = json::array();
  for (int i = 0; i < count; ++i) {
    const std::string name = item_name(i);
    json item{{"name", name}, {"obs", name + "_obs.lft"}, {"gt", name + "_gt.lft"}};
    GridImage gt;
    GridImage obs;
    if (task == "denoise") {
      gt = simulate_phantom(kind, size, rng, false);
      obs = awgn(gt, NoiseSpec::sigma(noise.at("sigma").get<double>()), rng);
    } else if (task == "ldct") {
      gt = simulate_phantom(kind, size, rng, true);
      const GridImage sino = awgn(radon(gt, angles), NoiseSpec::snr_db(noise.at("snr_db").get<double>()), rng);
      obs = fbp(sino, angles, fbp_filter);
      save_tensor(out / (name + "_meas.lft"), tensor_from_image(sino));
      item["meas"] = name + "_meas.lft";
    } else if (task == "ks") {
      gt = phantom_gen(kind, size, rng);
      const double scale = op.at("kappa_std").get<double>();
      for (auto& v : gt.data()) v *= scale;
      const GridImage gamma = awgn(ks_forward(gt), NoiseSpec::sigma(ks_sigma), rng);
      obs = ks_inverse(gamma);
      save_tensor(out / (name + "_meas.lft"), tensor_from_image(gamma));
      item["meas"] = name + "_meas.lft";
    } else if (task == "inpaint") {
      gt = simulate_phantom(kind, size, rng, false);
      const GridImage mask = random_pixel_mask(size, size, op.at("p").get<double>(), rng);
      obs = InpaintOp(mask).simulate(gt, NoiseSpec::sigma(noise.at("sigma").get<double>()), rng);
      save_tensor(out / (name + "_mask.lft"), tensor_from_image(mask));
      save_tensor(out / (name + "_meas.lft"), tensor_from_image(obs));
      item["mask"] = name + "_mask.lft";
      item["meas"] = name + "_meas.lft";
    } else if (task == "radio") {
      gt = simulate_phantom(kind, size, rng, false);
      const GridImage meas =
          shared_op->simulate(gt, NoiseSpec::snr_db(noise.at("snr_db").get<double>()), rng);
      obs = shared_op->adjoint(meas);
      save_tensor(out / (name + "_meas.lft"), tensor_from_image(meas));
      item["meas"] = name + "_meas.lft";
      item["mask"] = "uv_mask.lft";
    } else {
      gt = simulate_phantom(kind, size, rng, false);
      obs = transpose_image(gt);
    }
    save_tensor(out / (name + "_obs.lft"), tensor_from_image(obs));
    save_tensor(out / (name + "_gt.lft"), tensor_from_image(gt));
    items.push_back(item);
  }
  manifest["items"] = items;
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  write_text(out / "run_config.json", cfg.dump(2) + "\n");
  return json{{"command", "simulate"}, {"task", task}, {"count", count}, {"output", out.string()},
              {"noise", noise}, {"operator", op}};
}

namespace {

template <class T>
json train_model(LofiModel<T>& model, const std::vector<TrainPair>& train_set,
                 const std::vector<TrainPair>& val_set, const TrainConfig& train,
                 const fs::path& out, int checkpoint_every) {
  const fs::path ckpt = out / "model.lofi";
  std::ofstream csv(out / "metrics.csv", std::ios::trunc);
  if (!csv) throw Error(ErrorCode::Io, "cannot write metrics.csv");
  csv << "step,loss,val_psnr\n";
  TrainCallbacks cb;
  cb.on_log = [&](const TrainLogRow& row) {
    csv << row.step << ',' << format_double(row.loss) << ',';
    if (row.val_psnr) csv << format_double(*row.val_psnr);
    csv << '\n';
  };
  int epoch = 0;
  cb.on_epoch = [&](std::int64_t) {
    ++epoch;
    if (checkpoint_every > 0 && epoch % checkpoint_every == 0) save_checkpoint(model, ckpt);
  };
  const TrainSummary summary = train_loop<T>(model, train_set, val_set, train, cb);
  csv.flush();
  save_checkpoint(model, ckpt);
  if (model.config.filter == FilterMode::Fourier) filter_export(model.params.fourier, ckpt);
  json result{{"command", "train"},
              {"checkpoint", ckpt.string()},
              {"steps", summary.steps},
              {"model_step", model.step},
              {"parameters", model.params.parameter_count()}};
  if (!summary.log.empty()) result["final_loss"] = summary.log.back().loss;
  if (!val_set.empty()) {
    result["val_psnr"] = number_or_inf(summary.final_val_psnr);
    result["best_val_psnr"] = number_or_inf(summary.best_val_psnr);
  }
  return result;
}

void normalization_stats(const std::vector<TrainPair>& pairs, bool target, double& mean, double& sd) {
  double s = 0.0;
  double s2 = 0.0;
  double n = 0.0;
  for (const auto& p : pairs) {
    const GridImage& img = target ? p.target : p.observation;
    for (double v : img.data()) {
      s += v;
      s2 += v * v;
      n += 1.0;
    }
  }
  mean = s / n;
  sd = std::sqrt(std::max(s2 / n - mean * mean, 0.0));
  if (!(sd > 0.0)) sd = 1.0;
}

}  // namespace

json run_train(const json& in) {
  json cfg = in;
  reject_unknown(cfg,
                 {"task", "data", "val_data", "val_count", "output", "model", "train", "resume",
                  "normalize", "seed", "threads", "checkpoint_every"},
                 "train run config");
  resolve_seed(cfg);
  const auto seed = get_or<std::uint64_t>(cfg, "seed", 0);
  const fs::path out = get_required<std::string>(cfg, "output");
  std::vector<TrainPair> data = load_pairs(list_dataset(get_required<std::string>(cfg, "data")));
  std::vector<TrainPair> val;
  if (cfg.contains("val_data")) {
    val = load_pairs(list_dataset(get_required<std::string>(cfg, "val_data")));
  } else {
    const int hold = get_or(cfg, "val_count", 0);
    if (hold < 0 || hold >= static_cast<int>(data.size())) {
      throw Error(ErrorCode::Config, "val_count must leave at least one training image");
    }
    val.assign(data.end() - hold, data.end());
    data.erase(data.end() - hold, data.end());
  }
  json train_json = cfg.value("train", json::object());
  if (!train_json.contains("seed")) train_json["seed"] = seed;
  if (cfg.contains("threads")) train_json["threads"] = cfg.at("threads");
  const TrainConfig train = TrainConfig::from_json(train_json);

  make_dirs(out);
  json model_json = cfg.value("model", json::object());
  if (!model_json.is_object()) throw Error(ErrorCode::Config, "model must be a JSON object");
  if (!model_json.contains("seed")) model_json["seed"] = seed;
  if (!model_json.contains("input_size")) model_json["input_size"] = data.front().observation.height();
  if (!model_json.contains("channels")) model_json["channels"] = data.front().observation.channels();
  if (get_or(cfg, "normalize", false)) {
    double m = 0.0;
    double s = 1.0;
    normalization_stats(data, false, m, s);
    model_json["input_shift"] = m;
    model_json["input_scale"] = s;
    normalization_stats(data, true, m, s);
    model_json["output_shift"] = m;
    model_json["output_scale"] = s;
  }
  const int checkpoint_every = get_or(cfg, "checkpoint_every", 0);
  json result;
  if (cfg.contains("resume")) {
    const fs::path resume = get_required<std::string>(cfg, "resume");
    result = with_checkpoint(resume, [&](auto& model) {
      cfg["model"] = model.config.to_json();
      return train_model(model, data, val, train, out, checkpoint_every);
    });
  } else {
    const LofiConfig mc = LofiConfig::from_json(model_json);
    cfg["model"] = mc.to_json();
    if (mc.precision == Precision::F64) {
      auto model = LofiModel<double>::create(mc);
      result = train_model(model, data, val, train, out, checkpoint_every);
    } else {
      auto model = LofiModel<float>::create(mc);
      result = train_model(model, data, val, train, out, checkpoint_every);
    }
  }
  cfg["train"] = train.to_json();
  write_text(out / "config.json", cfg.dump(2) + "\n");
  result["train_size"] = data.size();
  result["val_size"] = val.size();
  return result;
}

json run_infer(const json& in) {
  json cfg = in;
  reject_unknown(cfg,
                 {"checkpoint", "input", "output", "height", "width", "scale", "pixel_batch",
                  "threads", "seed"},
                 "infer config");
  const fs::path ckpt = get_required<std::string>(cfg, "checkpoint");
  const GridImage q = load_image(get_required<std::string>(cfg, "input"));
  fs::path out = get_required<std::string>(cfg, "output");
  if (out.extension() == ".lft" || out.extension() == ".png") out.replace_extension();
  const double scale = get_or(cfg, "scale", 1.0);
  const int height = get_or(cfg, "height", static_cast<int>(std::lround(q.height() * scale)));
  const int width = get_or(cfg, "width", static_cast<int>(std::lround(q.width() * scale)));
  const int pixel_batch = get_or(cfg, "pixel_batch", 4096);
  const int threads = get_or(cfg, "threads", 1);
  if (out.has_parent_path()) make_dirs(out.parent_path());
  const GridImage img = with_checkpoint(ckpt, [&](auto& model) {
    return infer_image(model, q, height, width, pixel_batch, threads);
  });
  save_outputs(out, img);
  return json{{"command", "infer"}, {"output", out.string() + ".lft"},
              {"height", img.height()}, {"width", img.width()}, {"channels", img.channels()}};
}

json run_admm(const json& in) {
  json cfg = in;
  reject_unknown(cfg,
                 {"checkpoint", "task", "measurements", "mask", "angles", "size", "alpha",
                  "iterations", "ground_truth", "output", "threads", "pixel_batch",
                  "snapshot_every", "subtract_dual", "seed"},
                 "admm config");
  const std::string task = require_task(get_required<std::string>(cfg, "task"));
  const GridImage q = load_image(get_required<std::string>(cfg, "measurements"));
  const fs::path out = get_required<std::string>(cfg, "output");
  AdmmConfig admm;
  admm.alpha = get_or(cfg, "alpha", 0.05);
  admm.iterations = get_or(cfg, "iterations", 90);
  admm.subtract_dual = get_or(cfg, "subtract_dual", false);
  const int threads = get_or(cfg, "threads", 1);
  const int pixel_batch = get_or(cfg, "pixel_batch", 4096);
  const int snapshot_every = get_or(cfg, "snapshot_every", 10);
  std::unique_ptr<LinearOperator> op;
  if (task == "inpaint") {
    op = std::make_unique<InpaintOp>(load_image(get_required<std::string>(cfg, "mask")));
  } else if (task == "radio") {
    op = std::make_unique<FourierMaskOp>(load_image(get_required<std::string>(cfg, "mask")));
  } else if (task == "ks") {
    op = std::make_unique<KsOp>(q.height());
  } else if (task == "ldct") {
    const int size = get_or(cfg, "size", q.width());
    op = std::make_unique<RadonOp>(size, uniform_angles(get_or(cfg, "angles", q.height())));
  } else if (task == "denoise") {
    op = std::make_unique<IdentityOp>(q.shape());
  } else {
    throw Error(ErrorCode::Config, "task '" + task + "' has no ADMM operator");
  }
  std::optional<GridImage> gt;
  if (cfg.contains("ground_truth")) gt = load_image(get_required<std::string>(cfg, "ground_truth"));
  make_dirs(out);
  std::ofstream csv(out / "residuals.csv", std::ios::trunc);
  if (!csv) throw Error(ErrorCode::Io, "cannot write residuals.csv");
  csv << "iter,primal_residual,psnr_vs_gt\n";
  admm.on_iteration = [&](int k, const GridImage& f, const GridImage& v) {
    double residual = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) residual += std::pow(f.data()[i] - v.data()[i], 2);
    csv << k << ',' << format_double(std::sqrt(residual)) << ',';
    if (gt) csv << format_double(psnr(v, *gt, auto_peak(*gt)));
    csv << '\n';
    if (snapshot_every > 0 && k % snapshot_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "iter_%04d.png", k);
      save_png(out / name, v, 0.0, 1.0);
    }
  };
  auto solve = [&](const ImageMap& denoiser) { return admm_run(*op, q, denoiser, admm); };
  AdmmResult res;
  if (cfg.contains("checkpoint")) {
    res = with_checkpoint(get_required<std::string>(cfg, "checkpoint"), [&](auto& model) {
      const ImageMap denoiser = [&](const GridImage& x) {
        return infer_image(model, x, x.height(), x.width(), pixel_batch, threads);
      };
      return solve(denoiser);
    });
  } else {
    res = solve([](const GridImage& x) { return x; });
  }
  if (res.reconstruction.empty()) res.reconstruction = GridImage(op->domain());
  save_outputs(out / "reconstruction", res.reconstruction);
  write_text(out / "run_config.json", cfg.dump(2) + "\n");
  json summary{{"command", "admm"}, {"iterations", admm.iterations},
               {"output", (out / "reconstruction.lft").string()}};
  if (!res.primal_residual.empty()) {
    summary["first_residual"] = res.primal_residual.front();
    summary["final_residual"] = res.primal_residual.back();
  }
  if (gt) summary["psnr"] = number_or_inf(psnr(res.reconstruction, *gt, auto_peak(*gt)));
  return summary;
}

json run_eval(const json& in) {
  json cfg = in;
  reject_unknown(cfg,
                 {"checkpoint", "data", "inputs", "references", "names", "peak", "csv",
                  "threads", "pixel_batch", "seed"},
                 "eval config");
  const int threads = get_or(cfg, "threads", 1);
  const int pixel_batch = get_or(cfg, "pixel_batch", 4096);
  std::optional<double> fixed_peak;
  if (cfg.contains("peak") && !cfg.at("peak").is_string()) fixed_peak = get_required<double>(cfg, "peak");
  json rows = json::array();
  // Index 0 pools scored images; index 1 pools raw observations when a model is scored.
  double sum_psnr[2] = {0.0, 0.0};
  double sum_ssim[2] = {0.0, 0.0};
  int n[2] = {0, 0};
  const bool has_model = cfg.contains("checkpoint");
  auto add = [&](const std::string& name, const GridImage& x, const GridImage& ref, bool baseline) {
    const double peak = fixed_peak ? *fixed_peak : auto_peak(ref);
    const double p = psnr(x, ref, peak);
    const double s = ssim(x, ref, peak);
    rows.push_back({{"name", name}, {"psnr", number_or_inf(p)}, {"ssim", s}, {"peak", peak}});
    const int slot = baseline && has_model ? 1 : 0;
    if (std::isfinite(p)) sum_psnr[slot] += p;
    sum_ssim[slot] += s;
    ++n[slot];
  };
  if (cfg.contains("data")) {
    const auto items = list_dataset(get_required<std::string>(cfg, "data"));
    auto eval_items = [&](auto* model) {
      for (const auto& it : items) {
        const GridImage obs = load_image(it.obs);
        const GridImage gt = load_image(it.gt);
        if (obs.shape() == gt.shape()) add(it.name + ":input", obs, gt, true);
        if (model) {
          add(it.name + ":lofi",
              infer_image(*model, obs, gt.height(), gt.width(), pixel_batch, threads), gt, false);
        }
      }
      return 0;
    };
    if (cfg.contains("checkpoint")) {
      with_checkpoint(get_required<std::string>(cfg, "checkpoint"),
                      [&](auto& model) { return eval_items(&model); });
    } else {
      eval_items(static_cast<LofiModel<float>*>(nullptr));
    }
  } else {
    const auto inputs = get_required<std::vector<std::string>>(cfg, "inputs");
    const auto refs = get_required<std::vector<std::string>>(cfg, "references");
    const auto names = get_or(cfg, "names", inputs);
    if (inputs.size() != refs.size() || names.size() != inputs.size()) {
      throw Error(ErrorCode::Config, "inputs, references and names must have equal length");
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) add(names[i], load_image(inputs[i]), load_image(refs[i]), false);
  }
  if (n[0] == 0) throw Error(ErrorCode::InvalidInput, "nothing to evaluate");
  if (cfg.contains("csv")) {
    std::ostringstream os;
    os << "name,psnr,ssim\n";
    for (const auto& r : rows) {
      os << r.at("name").get<std::string>() << ','
         << (r.at("psnr").is_string() ? r.at("psnr").get<std::string>()
                                      : format_double(r.at("psnr").get<double>()))
         << ',' << format_double(r.at("ssim").get<double>()) << '\n';
    }
    write_text(get_required<std::string>(cfg, "csv"), os.str());
  }
  json out{{"command", "eval"}, {"rows", rows}, {"mean_psnr", sum_psnr[0] / n[0]},
           {"mean_ssim", sum_ssim[0] / n[0]}};
  if (n[1] > 0) {
    out["input_mean_psnr"] = sum_psnr[1] / n[1];
    out["input_mean_ssim"] = sum_ssim[1] / n[1];
  }
  return out;
}

namespace {

template <class T>
json bench_resolution(const LofiConfig& base, const TrainConfig& train, int n, int steps,
                      std::uint64_t seed) {
  LofiConfig mc = base;
  mc.input_size = n;
  LofiModel<T> model = LofiModel<T>::create(mc);
  Rng data_rng(seed);
  std::vector<TrainPair> pairs;
  for (int i = 0; i < train.object_batch; ++i) {
    GridImage gt = phantom_gen(PhantomKind::Texture, n, data_rng);
    GridImage obs = awgn(gt, NoiseSpec::sigma(0.15), data_rng);
    pairs.push_back({std::move(obs), std::move(gt)});
  }
  std::vector<const TrainPair*> batch;
  for (const auto& p : pairs) batch.push_back(&p);
  Rng rng(seed + 1);
  // Warm-up step: transform plans and first-touch buffers.
  train_step<T>(model, batch, rng, train);
  memprobe_begin();
  train_step<T>(model, batch, rng, train);
  const AllocationCount counted = memprobe_end();
  const auto start = std::chrono::steady_clock::now();
  for (int s = 0; s < steps; ++s) train_step<T>(model, batch, rng, train);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double per_step = seconds / std::max(1, steps);
  return json{{"N", n},
              {"transient_bytes", counted.bytes},
              {"transient_floats", counted.bytes / sizeof(float)},
              {"allocations", counted.calls},
              {"seconds_per_step", per_step},
              {"seconds_per_100_steps", per_step * 100.0}};
}

}  // namespace

json run_bench(const json& in) {
  json cfg = in;
  reject_unknown(cfg, {"resolutions", "steps", "model", "train", "seed", "output", "threads"},
                 "bench config");
  resolve_seed(cfg);
  auto resolutions = get_or(cfg, "resolutions", std::vector<int>{64, 256});
  std::sort(resolutions.begin(), resolutions.end());
  if (resolutions.empty()) throw Error(ErrorCode::Config, "bench needs at least one resolution");
  const int steps = get_or(cfg, "steps", 3);
  const auto seed = get_or<std::uint64_t>(cfg, "seed", 0);
  json train_json = cfg.value("train", json{{"object_batch", 4}});
  train_json["threads"] = 1;  // allocation accounting is process-global
  const TrainConfig train = TrainConfig::from_json(train_json);
  json model_json = cfg.value("model", json::object());
  if (!model_json.contains("seed")) model_json["seed"] = seed;
  model_json["input_size"] = resolutions.front();
  const LofiConfig mc = LofiConfig::from_json(model_json);
  json rows = json::array();
  for (int n : resolutions) {
    rows.push_back(mc.precision == Precision::F64 ? bench_resolution<double>(mc, train, n, steps, seed)
                                                  : bench_resolution<float>(mc, train, n, steps, seed));
  }
  bool same_memory = true;
  double tmin = rows.front().at("seconds_per_step").get<double>();
  double tmax = tmin;
  for (const auto& r : rows) {
    same_memory = same_memory && r.at("transient_bytes") == rows.front().at("transient_bytes") &&
                  r.at("allocations") == rows.front().at("allocations");
    tmin = std::min(tmin, r.at("seconds_per_step").get<double>());
    tmax = std::max(tmax, r.at("seconds_per_step").get<double>());
  }
  json report{{"command", "bench"},
              {"instrumented", memprobe_available()},
              {"rows", rows},
              {"memory_invariant", memprobe_available() && same_memory},
              {"time_ratio", tmin > 0.0 ? tmax / tmin : 0.0}};
  if (cfg.contains("output")) {
    std::ostringstream os;
    os << "N,transient_floats,allocations,seconds_per_step,seconds_per_100_steps\n";
    for (const auto& r : rows) {
      os << r.at("N").get<int>() << ',' << r.at("transient_floats").get<unsigned long long>() << ','
         << r.at("allocations").get<unsigned long long>() << ','
         << format_double(r.at("seconds_per_step").get<double>()) << ','
         << format_double(r.at("seconds_per_100_steps").get<double>()) << '\n';
    }
    write_text(get_required<std::string>(cfg, "output"), os.str());
  }
  return report;
}

namespace {

// Grayscale image scaled up by `zoom` with the query pixel in red and the
// sample positions of one stage in green.
GridImage trace_overlay(const GridImage& q, Coord center, const Matrix<double>& offsets,
                        Eigen::Index row, int zoom) {
  const GridImage gray = q.channel(0);
  const auto [lo, hi] = std::minmax_element(gray.data().begin(), gray.data().end());
  const double span = *hi > *lo ? *hi - *lo : 1.0;
  const int h = q.height() * zoom;
  const int w = q.width() * zoom;
  GridImage img(h, w, 3);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double v = (gray.at(r / zoom, c / zoom) - *lo) / span;
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = 0.6 * v;
    }
  }
  auto dot = [&](double x, double y, double red, double green) {
    const int cc = static_cast<int>(std::floor(x * w));
    const int rr = static_cast<int>(std::floor(y * h));
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int r = rr + dr;
        const int c = cc + dc;
        if (r < 0 || c < 0 || r >= h || c >= w) continue;
        img.at(r, c, 0) = red;
        img.at(r, c, 1) = green;
        img.at(r, c, 2) = 0.0;
      }
    }
  };
  for (Eigen::Index k = 0; k < offsets.cols() / 2; ++k) {
    dot(center.x + offsets(row, 2 * k), center.y + offsets(row, 2 * k + 1), 0.0, 1.0);
  }
  dot(center.x, center.y, 1.0, 0.0);
  return img;
}

}  // namespace

json run_trace(const json& in) {
  json cfg = in;
  reject_unknown(cfg, {"checkpoint", "input", "pixels", "output", "zoom", "threads", "seed"},
                 "ccpg-trace config");
  const GridImage q = load_image(get_required<std::string>(cfg, "input"));
  const auto pixels = get_required<std::vector<std::vector<int>>>(cfg, "pixels");
  const fs::path stem = get_required<std::string>(cfg, "output");
  const int zoom = get_or(cfg, "zoom", 4);
  if (pixels.empty()) throw Error(ErrorCode::Config, "pixels must list at least one [row, col]");
  std::vector<Coord> coords;
  for (const auto& p : pixels) {
    if (p.size() != 2 || p[0] < 0 || p[1] < 0 || p[0] >= q.height() || p[1] >= q.width()) {
      throw Error(ErrorCode::Config, "each pixel must be [row, col] inside the input");
    }
    coords.push_back(pixel_center(p[0], p[1], q.height(), q.width()));
  }
  if (stem.has_parent_path()) make_dirs(stem.parent_path());
  struct TraceOut {
    std::vector<Matrix<double>> trace;
    std::vector<Coord> centers;
  };
  const TraceOut t = with_checkpoint(get_required<std::string>(cfg, "checkpoint"), [&](auto& model) {
    return TraceOut{trace_offsets(model, q, coords), map_coordinates(model, coords)};
  });
  const auto stages = static_cast<std::uint32_t>(t.trace.size());
  const auto k_count = static_cast<std::uint32_t>(t.trace.front().cols() / 2);
  Tensor tensor;
  tensor.dtype = DType::F64;
  tensor.dims = {static_cast<std::uint32_t>(coords.size()), stages, k_count, 2};
  for (std::size_t p = 0; p < coords.size(); ++p) {
    for (const auto& stage : t.trace) {
      for (Eigen::Index i = 0; i < stage.cols(); ++i) {
        tensor.values.push_back(stage(static_cast<Eigen::Index>(p), i));
      }
    }
  }
  save_tensor(stem.string() + ".trace.lft", tensor);
  json frames = json::array();
  for (std::size_t p = 0; p < coords.size(); ++p) {
    for (std::uint32_t s = 0; s < stages; ++s) {
      char suffix[48];
      std::snprintf(suffix, sizeof(suffix), "_p%02zu_s%u.png", p, s);
      const std::string file = stem.string() + suffix;
      save_png(file, trace_overlay(q, t.centers[p], t.trace[s], static_cast<Eigen::Index>(p), zoom));
      frames.push_back(file);
    }
  }
  return json{{"command", "ccpg-trace"}, {"trace", stem.string() + ".trace.lft"},
              {"stages", stages}, {"frames", frames}};
}

json run_command(const std::string& command, const json& config) {
  if (command == "simulate") return run_simulate(config);
  if (command == "train") return run_train(config);
  if (command == "infer") return run_infer(config);
  if (command == "admm") return run_admm(config);
  if (command == "eval") return run_eval(config);
  if (command == "bench") return run_bench(config);
  if (command == "ccpg-trace") return run_trace(config);
  throw Error(ErrorCode::InvalidInput, "unknown command '" + command + "'");
}

}  // namespace lofi
