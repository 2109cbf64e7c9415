#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "segattn/commands.hpp"

int main(int argc, char** argv) {
  using namespace segattn;
  CLI::App app{"Attention-based encoder/decoder semantic segmentation toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  std::string gen_size = "32x32";
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n", gen.n, "Number of samples");
  gen_cmd->add_option("--size", gen_size, "Image size HxW");
  gen_cmd->add_option("--classes", gen.classes, "Number of classes including background");
  gen_cmd->add_option("--seed", gen.seed, "Random seed");

  TrainArgs tr;
  std::string tr_palette;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write checkpoints");
  train_cmd->add_option("--config", tr.config, "Run configuration file")->required();
  train_cmd->add_option("--data", tr.data, "Dataset manifest")->required();
  train_cmd->add_option("--out", tr.out, "Output directory")->required();
  train_cmd->add_option("--palette", tr_palette, "RGB palette for color masks");

  EvalArgs ev;
  std::string ev_checkpoint, ev_out, ev_palette;
  std::size_t ev_classes = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", ev_checkpoint, "Checkpoint file");
  eval_cmd->add_option("--data", ev.data, "Dataset manifest")->required();
  eval_cmd->add_option("--out", ev_out, "Directory for metrics.csv");
  eval_cmd->add_option("--palette", ev_palette, "RGB palette for color masks");
  eval_cmd->add_flag("--oracle", ev.oracle, "Score ground truth against itself");
  eval_cmd->add_option("--classes", ev_classes, "Class count in oracle mode");

  AblateArgs ab;
  std::string ab_palette;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train architecture variants and tabulate mIoU");
  ablate_cmd->add_option("--axis", ab.axis, "pooling or branches")
      ->required()
      ->check(CLI::IsMember({"pooling", "branches"}));
  ablate_cmd->add_option("--config", ab.config, "Base run configuration")->required();
  ablate_cmd->add_option("--data", ab.data, "Dataset manifest")->required();
  ablate_cmd->add_option("--out", ab.out, "Output directory")->required();
  ablate_cmd->add_option("--palette", ab_palette, "RGB palette for color masks");
  ablate_cmd->add_flag("--parallel", ab.parallel, "Run variants concurrently");

  ProfileArgs pr;
  std::string pr_config;
  auto* profile_cmd = app.add_subcommand("profile", "Report FLOPs, parameters and speed");
  profile_cmd->add_option("--config", pr_config, "Run configuration file");
  profile_cmd->add_option("--input-size", pr.input_size, "Input size HxW");
  profile_cmd->add_option("--batch", pr.batch, "Batch size");
  profile_cmd->add_option("--warmup", pr.warmup, "Warmup iterations");
  profile_cmd->add_option("--iters", pr.iters, "Timed iterations");

  GradcheckArgs gc;
  std::string gc_config;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of model gradients");
  grad_cmd->add_option("--config", gc_config, "Run configuration file (a tiny model by default)");
  grad_cmd->add_option("--tol", gc.tol, "Relative error tolerance");
  grad_cmd->add_option("--step", gc.step, "Finite-difference step");
  grad_cmd->add_option("--floor", gc.floor, "Gradient magnitude below which absolute error is used");
  grad_cmd->add_option("--seed", gc.seed, "Random seed");
  grad_cmd->add_flag("--inject-backward-fault", gc.inject_fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  auto opt_path = [](const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s);
  };

  if (*gen_cmd) {
    try {
      std::tie(gen.height, gen.width) = parse_extent(gen_size);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitUsage;
    }
    return cmd_gen_data(gen, std::cout, std::cerr);
  }
  if (*train_cmd) {
    tr.palette = opt_path(tr_palette);
    return cmd_train(tr, std::cout, std::cerr);
  }
  if (*eval_cmd) {
    ev.checkpoint = opt_path(ev_checkpoint);
    ev.out = opt_path(ev_out);
    ev.palette = opt_path(ev_palette);
    if (ev_classes != 0) ev.classes = ev_classes;
    return cmd_eval(ev, std::cout, std::cerr);
  }
  if (*ablate_cmd) {
    ab.palette = opt_path(ab_palette);
    return cmd_ablate(ab, std::cout, std::cerr);
  }
  if (*profile_cmd) {
    pr.config = opt_path(pr_config);
    return cmd_profile(pr, std::cout, std::cerr);
  }
  gc.config = opt_path(gc_config);
  return cmd_gradcheck(gc, std::cout, std::cerr);
}
