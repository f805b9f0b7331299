#include "lofi/lofi.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>
#include <variant>

#include "lofi/error.hpp"
#include "lofi/memprobe.hpp"
#include "lofi/metrics.hpp"
#include "lofi/model.hpp"
#include "lofi/runs.hpp"
#include "lofi/tensor_io.hpp"

struct lofi_image {
  lofi::GridImage image;
};

struct lofi_model {
  std::variant<lofi::LofiModel<float>, lofi::LofiModel<double>> model;
};

namespace {

thread_local std::string g_last_error;

lofi_status fail(lofi_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs fn, mapping exceptions to status codes and the thread's last error.
template <class Fn>
lofi_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return LOFI_OK;
  } catch (const lofi::Error& e) {
    return fail(static_cast<lofi_status>(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(LOFI_CONFIG, e.what());
  } catch (const std::bad_alloc&) {
    return fail(LOFI_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(LOFI_INTERNAL, e.what());
  } catch (...) {
    return fail(LOFI_INTERNAL, "unknown error");
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (!p) throw lofi::Error(lofi::ErrorCode::InvalidInput, std::string(what) + " is null");
}

nlohmann::json parse_json(const char* text) {
  require(text, "config_json");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw lofi::Error(lofi::ErrorCode::Config, std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

extern "C" {

const char* lofi_last_error(void) { return g_last_error.c_str(); }

const char* lofi_status_name(lofi_status status) {
  switch (status) {
    case LOFI_OK:
      return "ok";
    case LOFI_INTERNAL:
      return "internal";
    default:
      if (status >= LOFI_INVALID_INPUT && status <= LOFI_CONVERGENCE) {
        return lofi::error_code_name(static_cast<lofi::ErrorCode>(status));
      }
      return "unknown";
  }
}

const char* lofi_version(void) { return "0.1.0"; }

lofi_status lofi_run(const char* command, const char* config_json, char** summary_json) {
  if (summary_json) *summary_json = nullptr;
  return guarded([&] {
    require(command, "command");
    const nlohmann::json summary = lofi::run_command(command, parse_json(config_json));
    if (summary_json) *summary_json = copy_string(summary.dump());
  });
}

void lofi_string_free(char* s) { std::free(s); }

lofi_status lofi_image_create(int height, int width, int channels, const double* data,
                              lofi_image** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    if (height < 1 || width < 1 || channels < 1) {
      throw lofi::Error(lofi::ErrorCode::Shape, "image dimensions must be positive");
    }
    auto img = std::make_unique<lofi_image>();
    img->image = lofi::GridImage(height, width, channels);
    if (data) std::memcpy(img->image.data().data(), data, img->image.size() * sizeof(double));
    *out = img.release();
  });
}

lofi_status lofi_image_load(const char* path, lofi_image** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    *out = new lofi_image{lofi::load_image(path)};
  });
}

lofi_status lofi_image_save(const lofi_image* image, const char* path) {
  return guarded([&] {
    require(image, "image");
    require(path, "path");
    lofi::save_image(path, image->image);
  });
}

void lofi_image_free(lofi_image* image) { delete image; }

lofi_status lofi_image_shape(const lofi_image* image, int* height, int* width, int* channels) {
  return guarded([&] {
    require(image, "image");
    if (height) *height = image->image.height();
    if (width) *width = image->image.width();
    if (channels) *channels = image->image.channels();
  });
}

const double* lofi_image_data(const lofi_image* image) {
  return image ? image->image.data().data() : nullptr;
}

lofi_status lofi_model_create(const char* config_json, lofi_model** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    const lofi::LofiConfig cfg = lofi::LofiConfig::from_json(parse_json(config_json));
    if (cfg.precision == lofi::Precision::F64) {
      *out = new lofi_model{lofi::LofiModel<double>::create(cfg)};
    } else {
      *out = new lofi_model{lofi::LofiModel<float>::create(cfg)};
    }
  });
}

lofi_status lofi_model_load(const char* path, lofi_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    if (lofi::read_checkpoint_config(path).precision == lofi::Precision::F64) {
      *out = new lofi_model{lofi::load_checkpoint<double>(path)};
    } else {
      *out = new lofi_model{lofi::load_checkpoint<float>(path)};
    }
  });
}

lofi_status lofi_model_save(lofi_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    std::visit([&](auto& m) { lofi::save_checkpoint(m, path); }, model->model);
  });
}

void lofi_model_free(lofi_model* model) { delete model; }

lofi_status lofi_model_infer(const lofi_model* model, const lofi_image* observation,
                             int out_height, int out_width, int pixel_batch, int threads,
                             lofi_image** out) {
  return guarded([&] {
    require(model, "model");
    require(observation, "observation");
    require(out, "out");
    *out = nullptr;
    lofi::GridImage img = std::visit(
        [&](const auto& m) {
          return lofi::infer_image(m, observation->image, out_height, out_width, pixel_batch,
                                   threads);
        },
        model->model);
    *out = new lofi_image{std::move(img)};
  });
}

lofi_status lofi_model_config(const lofi_model* model, char** config_json) {
  return guarded([&] {
    require(model, "model");
    require(config_json, "config_json");
    *config_json = nullptr;
    const std::string text =
        std::visit([](const auto& m) { return m.config.to_json().dump(); }, model->model);
    *config_json = copy_string(text);
  });
}

lofi_status lofi_psnr(const lofi_image* x, const lofi_image* ref, double peak, double* out) {
  return guarded([&] {
    require(x, "x");
    require(ref, "ref");
    require(out, "out");
    *out = lofi::psnr(x->image, ref->image, peak > 0.0 ? peak : lofi::auto_peak(ref->image));
  });
}

lofi_status lofi_ssim(const lofi_image* x, const lofi_image* ref, double peak, double* out) {
  return guarded([&] {
    require(x, "x");
    require(ref, "ref");
    require(out, "out");
    *out = lofi::ssim(x->image, ref->image, peak > 0.0 ? peak : lofi::auto_peak(ref->image));
  });
}

int lofi_memprobe_available(void) { return lofi::memprobe_available() ? 1 : 0; }

}  // extern "C"
