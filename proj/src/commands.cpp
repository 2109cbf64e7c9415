#include "segattn/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <ostream>
#include <random>
#include <thread>
#include <utility>
#include <vector>

#include "segattn/autodiff.hpp"
#include "segattn/data.hpp"
#include "segattn/error.hpp"
#include "segattn/metrics.hpp"
#include "segattn/network.hpp"
#include "segattn/run_config.hpp"
#include "segattn/train.hpp"

namespace segattn {

namespace fs = std::filesystem;

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string fixed_or_blank(const std::optional<double>& v, int digits) {
  return v ? fixed(*v, digits) : std::string();
}

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::optional<ClassMap> load_palette(const std::optional<fs::path>& path) {
  if (!path) return std::nullopt;
  return ClassMap::from_palette_file(*path);
}

std::vector<SegSample> load_samples(const fs::path& manifest, const std::optional<ClassMap>& palette) {
  auto samples = load_dataset(manifest, palette ? &*palette : nullptr);
  if (samples.empty()) throw ConfigError("dataset " + manifest.string() + " is empty");
  return samples;
}

// Labels must be class indices below k or the ignore label.
void check_labels(const std::vector<SegSample>& samples, std::size_t k) {
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < s.mask.labels.size(); ++i) {
      const std::uint8_t v = s.mask.labels[i];
      if (v != kIgnoreLabel && v >= k) {
        throw ConfigError("sample " + s.id + " has label " + std::to_string(v) + " at pixel (" +
                          std::to_string(i / s.mask.width) + ", " + std::to_string(i % s.mask.width) +
                          ") but the model predicts " + std::to_string(k) + " classes");
      }
    }
  }
}

struct RunOutcome {
  TrainReport report;
  EvalResult test;
};

RunOutcome run_training(RunConfig cfg, const std::vector<SegSample>& samples, const fs::path& out_dir,
                        std::ostream* log) {
  cfg.model.input_height = samples.front().mask.height;
  cfg.model.input_width = samples.front().mask.width;
  if (cfg.augmentation.crop_height != 0) {
    cfg.model.input_height = cfg.augmentation.crop_height;
    cfg.model.input_width = cfg.augmentation.crop_width;
  }
  check_labels(samples, cfg.model.num_classes);
  auto [train_set, test_set] = split_dataset(samples, cfg.split_ratio, cfg.seed);

  SegModel model = build_model(cfg.model, InitSpec{InitScheme::kFanInUniform, cfg.seed});
  ensure_dir(out_dir);
  {
    std::ofstream cfg_out(out_dir / "config.txt", std::ios::binary);
    cfg_out << run_config_text(cfg);
  }

  TrainOptions opts;
  opts.epochs = cfg.epochs;
  opts.batch = std::min(cfg.batch, train_set.size());
  opts.seed = cfg.seed;
  opts.adam = cfg.adam;
  opts.augment = cfg.augment;
  opts.augmentation = cfg.augmentation;
  opts.out_dir = out_dir;
  if (log != nullptr) {
    opts.on_epoch = [log, total = cfg.epochs](const EpochRecord& r) {
      *log << "epoch " << r.epoch << "/" << total << " loss " << fixed(r.train_loss, 6)
           << " train_acc " << fixed(r.train_pixel_acc, 4) << " val_acc " << fixed(r.val_pixel_acc, 4)
           << " val_miou " << fixed(r.val_miou, 4) << "\n";
      log->flush();
    };
  }
  TrainReport report = train(model, train_set, test_set, opts);
  write_report_csv(out_dir / "report.csv", report);
  return RunOutcome{std::move(report), evaluate(model, test_set)};
}

}  // namespace

std::pair<std::size_t, std::size_t> parse_extent(const std::string& text) {
  const auto x = text.find_first_of("xX");
  auto parse = [&](const std::string& part) -> std::size_t {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos || part.size() > 9) {
      throw ConfigError("size '" + text + "' must look like HxW");
    }
    const std::size_t v = std::stoul(part);
    if (v == 0) throw ConfigError("size '" + text + "' has a zero extent");
    return v;
  };
  if (x == std::string::npos) throw ConfigError("size '" + text + "' must look like HxW");
  return {parse(text.substr(0, x)), parse(text.substr(x + 1))};
}

int cmd_gen_data(const GenDataArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.classes < 2 || args.classes > 255) {
      throw ConfigError("--classes must be in 2..255, got " + std::to_string(args.classes));
    }
    if (args.n == 0) throw ConfigError("--n must be >= 1");
    if (args.out.empty()) throw ConfigError("--out is required");
    SyntheticOptions so;
    so.count = args.n;
    so.height = args.height;
    so.width = args.width;
    so.num_classes = args.classes;
    so.seed = args.seed;
    const auto samples = gen_synthetic(so);
    ensure_dir(args.out);
    const fs::path manifest = save_dataset(args.out, samples);
    out << "wrote " << samples.size() << " samples to " << manifest.string() << "\n";
    return kExitOk;
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig cfg = load_run_config(args.config);
    const auto palette = load_palette(args.palette);
    if (palette && palette->num_classes() != cfg.model.num_classes) {
      throw ConfigError("palette defines " + std::to_string(palette->num_classes()) +
                        " classes but num_classes is " + std::to_string(cfg.model.num_classes));
    }
    const auto samples = load_samples(args.data, palette);
    const RunOutcome outcome = run_training(cfg, samples, args.out, &out);
    out << "final val mIoU " << fixed(outcome.test.metrics.mean_iou, 4) << "\n";
    return kExitOk;
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto palette = load_palette(args.palette);
    const auto samples = load_samples(args.data, palette);

    std::optional<ConfusionMatrix> cm;
    fs::path out_dir = args.out.value_or(fs::path("."));
    if (args.oracle) {
      std::size_t k = 0;
      if (args.classes) {
        k = *args.classes;
      } else if (palette) {
        k = palette->num_classes();
      } else {
        for (const auto& s : samples) {
          for (auto v : s.mask.labels) {
            if (v != kIgnoreLabel) k = std::max<std::size_t>(k, v + 1u);
          }
        }
        k = std::max<std::size_t>(k, 2);
      }
      check_labels(samples, k);
      cm.emplace(k);
      for (const auto& s : samples) cm->add(s.mask.labels, s.mask.labels);
    } else {
      if (!args.checkpoint) throw ConfigError("--checkpoint is required unless --oracle is given");
      const SegModel model = load_checkpoint(*args.checkpoint);
      const std::size_t k = model.config().num_classes;
      if (palette && palette->num_classes() != k) {
        throw ConfigError("palette defines " + std::to_string(palette->num_classes()) +
                          " classes but the checkpoint predicts " + std::to_string(k));
      }
      check_labels(samples, k);
      if (!args.out) out_dir = args.checkpoint->parent_path().empty() ? fs::path(".") : args.checkpoint->parent_path();
      cm = evaluate(model, samples).confusion;
    }

    const SegMetrics m = summarize(*cm);
    const std::size_t k = cm->num_classes();
    out << "Class";
    for (std::size_t c = 0; c < k; ++c) out << "\t" << (c + 1);
    out << "\nIOU";
    for (std::size_t c = 0; c < k; ++c) {
      out << "\t" << (m.per_class_iou[c] ? fixed(*m.per_class_iou[c], 3) : std::string("-"));
    }
    out << "\nmean IoU " << fixed(m.mean_iou, 3) << "\n";
    out << "mean class accuracy " << fixed(m.mean_class_accuracy, 3) << "\n";
    out << "pixel accuracy " << fixed(m.pixel_accuracy, 3) << "\n";

    ensure_dir(out_dir);
    std::ofstream csv(out_dir / "metrics.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write " + (out_dir / "metrics.csv").string());
    csv << "class,iou,accuracy\n";
    for (std::size_t c = 0; c < k; ++c) {
      csv << (c + 1) << "," << fixed_or_blank(m.per_class_iou[c], 6) << ","
          << fixed_or_blank(m.per_class_accuracy[c], 6) << "\n";
    }
    csv << "mean," << fixed(m.mean_iou, 6) << "," << fixed(m.mean_class_accuracy, 6) << "\n";
    csv << "pixel,," << fixed(m.pixel_accuracy, 6) << "\n";
    return kExitOk;
  });
}

int cmd_ablate(const AblateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig base = load_run_config(args.config);
    const auto palette = load_palette(args.palette);
    const auto samples = load_samples(args.data, palette);

    struct Variant {
      std::string row_prefix;
      std::string dir;
      RunConfig cfg;
    };
    std::vector<Variant> variants;
    std::string header;
    if (args.axis == "pooling") {
      header = "Number of pooling,mIoU";
      for (std::size_t p = 0; p <= 5; ++p) {
        RunConfig cfg = base;
        auto& mc = cfg.model;
        while (mc.stage_channels.size() < p) mc.stage_channels.push_back(mc.stage_channels.back());
        while (mc.dilation_schedule.size() < mc.stage_channels.size()) {
          mc.dilation_schedule.push_back(mc.dilation_schedule.back());
        }
        mc.pooling_count = p;
        variants.push_back({"Pooling x" + std::to_string(p), "pooling_" + std::to_string(p), cfg});
      }
    } else if (args.axis == "branches") {
      header = "Number of branches,Fusion methods,mIoU";
      for (std::size_t b : {1, 2}) {
        for (FusionMethod f : {FusionMethod::kNone, FusionMethod::kConcat}) {
          RunConfig cfg = base;
          cfg.model.branches = b;
          cfg.model.fusion = f;
          const std::string fname = f == FusionMethod::kConcat ? "concat" : "None";
          variants.push_back({std::to_string(b) + "," + fname,
                              "branches_" + std::to_string(b) + "_" + fusion_name(f), cfg});
        }
      }
    } else {
      throw ConfigError("--axis must be pooling or branches, got '" + args.axis + "'");
    }
    for (auto& v : variants) v.cfg.validate();

    std::vector<double> miou(variants.size(), 0.0);
    auto run_one = [&](std::size_t i) {
      const RunOutcome r = run_training(variants[i].cfg, samples, args.out / variants[i].dir, nullptr);
      miou[i] = r.test.metrics.mean_iou;
    };
    if (args.parallel) {
      std::vector<std::exception_ptr> errors(variants.size());
      {
        std::vector<std::jthread> workers;
        for (std::size_t i = 0; i < variants.size(); ++i) {
          workers.emplace_back([&, i] {
            try {
              run_one(i);
            } catch (...) {
              errors[i] = std::current_exception();
            }
          });
        }
      }
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    } else {
      for (std::size_t i = 0; i < variants.size(); ++i) {
        run_one(i);
        out << variants[i].row_prefix << " done, mIoU " << fixed(miou[i], 4) << "\n";
        out.flush();
      }
    }

    ensure_dir(args.out);
    std::ofstream csv(args.out / "ablation.csv", std::ios::binary);
    if (!csv) throw IoError("cannot write " + (args.out / "ablation.csv").string());
    csv << header << "\n";
    out << header << "\n";
    for (std::size_t i = 0; i < variants.size(); ++i) {
      const std::string row = variants[i].row_prefix + "," + fixed(miou[i], 6);
      csv << row << "\n";
      out << row << "\n";
    }
    return kExitOk;
  });
}

int cmd_profile(const ProfileArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto [h, w] = parse_extent(args.input_size);
    if (args.batch == 0) throw ConfigError("--batch must be >= 1");
    if (args.iters == 0) throw ConfigError("--iters must be >= 1");
    ModelConfig mc = args.config ? load_run_config(*args.config).model : ModelConfig{};
    mc.input_height = h;
    mc.input_width = w;
    const SegModel model = build_model(mc, InitSpec{});
    if (!model.accepts(h, w)) {
      auto suggest = [&](std::size_t extent) {
        const auto [below, above] = model.nearest_valid_extent(extent);
        std::string text = std::to_string(above);
        if (below > 0) text = std::to_string(below) + " or " + text;
        return text;
      };
      throw ConfigError("input size " + args.input_size + " is not accepted by this configuration; nearest heights " +
                        suggest(h) + ", nearest widths " + suggest(w));
    }
    const Shape shape{args.batch, mc.in_channels, h, w};
    const std::uint64_t flops = count_flops(model, shape);
    const std::uint64_t params = count_params(model);
    const FpsReport fps = benchmark_fps(model, shape, args.warmup, args.iters);
    out << "input_size,flops,params,ms,fps\n";
    out << h << "x" << w << "," << flops << "," << params << "," << fixed(fps.ms_per_frame, 4) << ","
        << fixed(fps.fps, 2) << "\n";
    return kExitOk;
  });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ModelConfig mc;
    if (args.config) {
      mc = load_run_config(*args.config).model;
    } else {
      mc.in_channels = 2;
      mc.num_classes = 3;
      mc.stage_channels = {2, 4};
      mc.dilation_schedule = {1, 2};
      mc.pooling_count = 1;
      mc.branches = 2;
      mc.decoder_kernel = 2;
      mc.decoder_stride = 2;
      mc.input_height = 4;
      mc.input_width = 4;
    }
    SegModel model = build_model(mc, InitSpec{InitScheme::kFanInUniform, args.seed});

    // Move zero-initialized biases and attention scales off zero so every
    // path carries gradient.
    std::mt19937_64 rng = make_rng(args.seed, 1, 0);
    std::uniform_real_distribution<double> small(-0.1, 0.1);
    for (auto& p : model.params()) {
      const bool is_alpha = p.name.size() > 6 && p.name.ends_with(".alpha");
      const bool is_bias = p.name.ends_with(".bias");
      if (is_alpha) {
        for (auto& v : p.value.storage()) v = 0.5 + small(rng);
      } else if (is_bias) {
        for (auto& v : p.value.storage()) v = small(rng);
      }
    }

    const std::size_t h = mc.input_height, w = mc.input_width;
    Tensor image({1, mc.in_channels, h, w});
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& v : image.storage()) v = unit(rng);
    std::vector<std::uint8_t> targets(h * w);
    for (auto& t : targets) t = static_cast<std::uint8_t>(rng() % mc.num_classes);

    std::vector<Tensor> inputs;
    for (const auto& p : model.params()) inputs.push_back(p.value);
    const ScalarFn fn = [&](Graph& g, std::span<const Var> vars) {
      Var x = g.leaf(image, false);
      return softmax_ce_loss(model.forward_with(x, vars), targets);
    };

    const bool previous = backward_fault_injection();
    set_backward_fault_injection(args.inject_fault);
    GradCheckReport report;
    try {
      report = grad_check(fn, inputs, args.step, args.tol, args.floor);
    } catch (...) {
      set_backward_fault_injection(previous);
      throw;
    }
    set_backward_fault_injection(previous);

    out << "parameter,max_rel_err,status\n";
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const double e = report.input_max_rel_err[i];
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3e", e);
      out << model.params()[i].name << "," << buf << "," << (e < args.tol ? "pass" : "fail") << "\n";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", report.max_rel_err);
    out << (report.pass ? "PASS" : "FAIL") << " max_rel_err " << buf << " tol " << args.tol << "\n";
    return report.pass ? kExitOk : kExitFailure;
  });
}

}  // namespace segattn
