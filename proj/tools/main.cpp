// SPDX-License-Identifier: Apache-2.0
// patchbf: simulate, beamform, train, infer, eval and bench from a run config.

#include <CLI11.hpp>

#include <iostream>
#include <thread>

#include "commands.hpp"

using namespace patchbf;

int main(int argc, char** argv) {
  CLI::App app{"Patch-wise learned beamforming: simulation, beamforming, training and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string preset_name = "default", config_path, out_dir;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--preset", preset_name, "Built-in configuration")
      ->check(CLI::IsMember({"default", "toy", "paper-scale"}));
  app.add_option("--config", config_path, "Run configuration file (JSON); overrides --preset");
  app.add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Run directory (default: paths.run_dir or runs/<name>)");

  auto* simulate = app.add_subcommand("simulate", "Simulate the phantom and dataset frames");
  bool phantom_only = false;
  simulate->add_flag("--phantom-only", phantom_only, "Skip the training frames");

  auto* beamform = app.add_subcommand("beamform", "DAS / MVDR images of RF frames");
  std::string method = "both";
  std::vector<std::string> beamform_frames;
  beamform->add_option("--method", method, "das, mvdr or both")
      ->check(CLI::IsMember({"das", "mvdr", "both"}));
  beamform->add_option("--frame", beamform_frames, "RF frame file (default: the phantom frame)");

  auto* train = app.add_subcommand("train", "Train the network on the dataset frames");

  auto* infer = app.add_subcommand("infer", "Learned images of RF frames");
  std::string checkpoint;
  bool identity = false;
  std::vector<std::string> infer_frames;
  auto* ckpt_opt = infer->add_option("--checkpoint", checkpoint, "Network checkpoint");
  infer->add_flag("--identity", identity, "Bypass the network (output equals DAS)")->excludes(ckpt_opt);
  infer->add_option("--frame", infer_frames, "RF frame file (default: the phantom frame)");

  auto* eval = app.add_subcommand("eval", "Contrast, resolution and similarity metrics");
  std::string eval_learned, eval_mvdr, eval_das;
  eval->add_option("--learned", eval_learned, "Learned image");
  eval->add_option("--mvdr", eval_mvdr, "MVDR image");
  eval->add_option("--das", eval_das, "DAS image");

  auto* show = app.add_subcommand("config", "Print the resolved run configuration");

  auto* bench = app.add_subcommand("bench", "Wall-clock timing of the three pipelines");
  bool parallel = false;
  std::string bench_checkpoint;
  bench->add_flag("--parallel", parallel, "Use --threads workers per image (default: one)");
  bench->add_option("--checkpoint", bench_checkpoint, "Network checkpoint (default: seeded init)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitConfig;
  }

  auto paths = [](const std::vector<std::string>& v) {
    return std::vector<std::filesystem::path>(v.begin(), v.end());
  };
  auto optional_path = [](const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s);
  };

  try {
    const cli::Run run = cli::open_run(preset_name, config_path, out_dir, threads);
    if (*show) {
      std::cout << serialize_config(run.config);
    } else if (*simulate) {
      const auto written = cli::cmd_simulate(run, {!phantom_only, true});
      std::cout << "wrote " << written.size() << " frames to " << run.frames_dir().string() << "\n";
    } else if (*beamform) {
      for (const auto& p : cli::cmd_beamform(run, paths(beamform_frames), method))
        std::cout << "wrote " << p.string() << "\n";
    } else if (*train) {
      const auto r = cli::cmd_train(run);
      std::cout << "best step " << r.best_step << ", val loss " << r.best_val_loss
                << " (zero network " << r.zero_val_loss << "), val SSIM " << r.best_val_ssim
                << " (DAS " << r.das_val_ssim << ")\n"
                << "wrote " << r.best_checkpoint.string() << ", " << r.loss_csv.string() << "\n";
    } else if (*infer) {
      require(identity || !checkpoint.empty(), ErrorKind::config,
              "infer needs --checkpoint or --identity");
      for (const auto& p : cli::cmd_infer(run, optional_path(checkpoint), paths(infer_frames)))
        std::cout << "wrote " << p.string() << "\n";
    } else if (*eval) {
      const auto r = cli::cmd_eval(
          run, {optional_path(eval_learned), optional_path(eval_mvdr), optional_path(eval_das)});
      std::cout << cli::table_text(r);
    } else if (*bench) {
      const auto results = cli::cmd_bench(run, {parallel, optional_path(bench_checkpoint)});
      for (const auto& r : results)
        std::cout << to_string(r.method) << ": median " << r.median_ms << " ms, min " << r.min_ms
                  << " ms\n";
      std::cout << "learned / mvdr median ratio: " << results[2].median_ms / results[1].median_ms
                << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "patchbf: " << cli::kind_name(e.kind()) << " error: " << e.what() << "\n";
    return cli::exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "patchbf: io error: " << e.what() << "\n";
    return cli::kExitIo;
  }
  return 0;
}
