// Command-line driver for the CGRL pipeline: synthetic data generation, the
// three training stages, evaluation and single-scene captioning.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cgrl/cgrl.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

struct Args {
  std::string config_path;
  std::string data_dir;
  std::string ckpt_in;
  std::string ckpt_out;
  std::string report_path;
  std::string predictions_path;
  std::string ablation;
  int scene_id = -1;
  bool quiet = false;
};

cgrl::TrainConfig apply_ablation(cgrl::TrainConfig config, const std::string& ablation) {
  if (ablation.empty()) return config;
  if (ablation == "no_cr") {
    config.no_cr = true;
  } else if (ablation == "no_arp") {
    config.no_arp = true;
  } else if (ablation == "no_og") {
    config.no_og = true;
  } else if (ablation == "no_na") {
    config.no_na = true;
  } else if (ablation == "no_ea") {
    config.no_ea = true;
  } else {
    throw cgrl::ConfigError("unknown ablation: " + ablation);
  }
  return config;
}

int run_generate(const Args& a) {
  cgrl::TrainConfig config = cgrl::load_config(a.config_path);
  cgrl::Dataset data = cgrl::make_dataset(config.world);
  cgrl::save_dataset(data, a.data_dir);
  if (!a.quiet) {
    std::cout << "wrote " << data.train.size() << " train / " << data.test.size()
              << " test scenes to " << a.data_dir << "\n";
  }
  return kExitOk;
}

int run_pretrain(const Args& a) {
  cgrl::TrainConfig config = cgrl::load_config(a.config_path);
  cgrl::Dataset data = cgrl::load_dataset(a.data_dir);
  cgrl::CgrlModel model = cgrl::build_model(config);
  cgrl::StageStats stats =
      cgrl::stage1_pretrain_language(model, data, a.quiet ? nullptr : &std::cerr);
  cgrl::save_checkpoint(model, 1, static_cast<std::uint64_t>(stats.steps), a.ckpt_out);
  if (!a.quiet) std::cout << "stage1 done, final loss " << stats.final_loss << "\n";
  return kExitOk;
}

int run_align(const Args& a) {
  cgrl::LoadedCheckpoint ckpt = cgrl::load_checkpoint(a.ckpt_in);
  cgrl::Dataset data = cgrl::load_dataset(a.data_dir);
  cgrl::AlignStats stats =
      cgrl::stage2_align(ckpt.model, data, a.quiet ? nullptr : &std::cerr);
  cgrl::save_checkpoint(ckpt.model, 2,
                        ckpt.global_step + static_cast<std::uint64_t>(ckpt.model.config.stage2_steps),
                        a.ckpt_out);
  if (!a.quiet) {
    std::cout << "stage2 done, cosine distance " << stats.initial_cos_distance << " -> "
              << stats.final_cos_distance << ", disc holdout accuracy "
              << stats.disc_holdout_accuracy << "\n";
  }
  return kExitOk;
}

int run_train(const Args& a) {
  cgrl::LoadedCheckpoint ckpt = cgrl::load_checkpoint(a.ckpt_in);
  ckpt.model.config = apply_ablation(ckpt.model.config, a.ablation);
  cgrl::Dataset data = cgrl::load_dataset(a.data_dir);
  cgrl::StageStats stats =
      cgrl::stage3_train_captioner(ckpt.model, data, a.quiet ? nullptr : &std::cerr);
  cgrl::save_checkpoint(ckpt.model, 3,
                        ckpt.global_step + static_cast<std::uint64_t>(stats.steps), a.ckpt_out);
  if (!a.quiet) std::cout << "stage3 done, final task loss " << stats.final_loss << "\n";
  return kExitOk;
}

int run_evaluate(const Args& a) {
  cgrl::LoadedCheckpoint ckpt = cgrl::load_checkpoint(a.ckpt_in);
  cgrl::Dataset data = cgrl::load_dataset(a.data_dir);
  cgrl::EvalOutput out = cgrl::evaluate(ckpt.model, data, a.quiet ? nullptr : &std::cerr);
  cgrl::write_report(out.report, a.report_path);
  cgrl::write_predictions(out.predictions, a.predictions_path);
  if (!a.quiet) std::cout << cgrl::report_json(out.report).dump(2) << "\n";
  return kExitOk;
}

int run_caption(const Args& a) {
  cgrl::LoadedCheckpoint ckpt = cgrl::load_checkpoint(a.ckpt_in);
  cgrl::Dataset data = cgrl::load_dataset(a.data_dir);
  cgrl::CgrlModel& m = ckpt.model;
  const cgrl::ScenePair* scene = nullptr;
  for (const auto& pair : data.test) {
    if (pair.scene_id == a.scene_id) scene = &pair;
  }
  for (const auto& pair : data.train) {
    if (pair.scene_id == a.scene_id) scene = &pair;
  }
  if (!scene) throw cgrl::DataError("scene id not found: " + std::to_string(a.scene_id));

  cgrl::Tape tape;
  cgrl::SceneForward f = cgrl::build_scene_forward(tape, m, *scene);
  std::optional<cgrl::ConsensusVars> consensus;
  if (!m.config.no_cr) consensus = cgrl::consensus_from_visual(tape, m, *scene);
  cgrl::DecodeResult decoded = cgrl::decode(tape, m.decoder, f.global_feature, consensus,
                                            f.regions, m.config.max_decode_len);
  std::vector<cgrl::Tensor> region_features;
  for (cgrl::Var r : f.regions) region_features.push_back(tape.val(r));

  std::cout << "scene " << scene->scene_id << ":";
  for (int tok : decoded.tokens) std::cout << " " << m.vocab.word(tok);
  std::cout << "\n";
  for (std::size_t t = 0; t < decoded.tokens.size(); ++t) {
    const int tok = decoded.tokens[t];
    if (!m.lexicon.is_object(tok)) continue;
    const int cls = m.lexicon.class_of(tok);
    const int region = cgrl::localize_word(cls, region_features, decoded.region_attention[t],
                                           m.w_s->value);
    const cgrl::Box& b = scene->regions[static_cast<std::size_t>(region)].box;
    std::cout << "  " << m.vocab.word(tok) << " -> region " << region << " [" << b.x << ", "
              << b.y << ", " << b.w << ", " << b.h << "]\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Consensus graph representation learning for grounded image captioning"};
  app.require_subcommand(1);
  Args args;
  app.add_flag("--quiet", args.quiet, "Suppress progress output");
  auto with_fallthrough = [](CLI::App* sub) {
    sub->fallthrough();
    return sub;
  };

  auto* gen = with_fallthrough(app.add_subcommand("generate-data", "Generate the synthetic paired dataset"));
  gen->add_option("--config", args.config_path, "Config JSON")->required();
  gen->add_option("--out", args.data_dir, "Output dataset directory")->required();

  auto* pre = with_fallthrough(app.add_subcommand("pretrain-language", "Stage 1: pretrain the language route"));
  pre->add_option("--data", args.data_dir, "Dataset directory")->required();
  pre->add_option("--config", args.config_path, "Config JSON")->required();
  pre->add_option("--out", args.ckpt_out, "Output checkpoint")->required();

  auto* align = with_fallthrough(app.add_subcommand("align", "Stage 2: adversarial visual-language alignment"));
  align->add_option("--data", args.data_dir, "Dataset directory")->required();
  align->add_option("--ckpt", args.ckpt_in, "Stage-1 checkpoint")->required();
  align->add_option("--out", args.ckpt_out, "Output checkpoint")->required();

  auto* train = with_fallthrough(app.add_subcommand("train", "Stage 3: train the captioner"));
  train->add_option("--data", args.data_dir, "Dataset directory")->required();
  train->add_option("--ckpt", args.ckpt_in, "Stage-2 checkpoint")->required();
  train->add_option("--ablation", args.ablation,
                    "Ablation flag: no_cr|no_arp|no_og|no_na|no_ea");
  train->add_option("--out", args.ckpt_out, "Output checkpoint")->required();

  auto* eval = with_fallthrough(app.add_subcommand("evaluate", "Decode the test split and compute all metrics"));
  eval->add_option("--data", args.data_dir, "Dataset directory")->required();
  eval->add_option("--ckpt", args.ckpt_in, "Trained checkpoint")->required();
  eval->add_option("--report", args.report_path, "Metrics report JSON")->required();
  eval->add_option("--predictions", args.predictions_path, "Prediction JSONL")->required();

  auto* cap = with_fallthrough(app.add_subcommand("caption", "Caption one scene and localize its object words"));
  cap->add_option("--data", args.data_dir, "Dataset directory")->required();
  cap->add_option("--ckpt", args.ckpt_in, "Trained checkpoint")->required();
  cap->add_option("--scene-id", args.scene_id, "Scene id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (gen->parsed()) return run_generate(args);
    if (pre->parsed()) return run_pretrain(args);
    if (align->parsed()) return run_align(args);
    if (train->parsed()) return run_train(args);
    if (eval->parsed()) return run_evaluate(args);
    if (cap->parsed()) return run_caption(args);
  } catch (const cgrl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cgrl::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const cgrl::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
