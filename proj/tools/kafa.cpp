// SPDX-License-Identifier: Apache-2.0
// kafa: command-line front end over the feature-adapter library.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numerical failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kafa/brand_kb.hpp"
#include "kafa/brand_vision.hpp"
#include "kafa/checkpoint.hpp"
#include "kafa/feature_bank.hpp"
#include "kafa/io.hpp"
#include "kafa/manifest.hpp"
#include "kafa/retrieval.hpp"
#include "kafa/synthetic.hpp"
#include "kafa/textprep.hpp"
#include "kafa/trainer.hpp"

namespace fs = std::filesystem;
using kafa::io::ordered_json;

namespace {

int exit_code(kafa::Errc c) {
  switch (c) {
    case kafa::Errc::invalid_argument:
    case kafa::Errc::modality_mismatch: return 1;
    case kafa::Errc::divergence: return 3;
    default: return 2;
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

fs::path seed_dir(const fs::path& out, std::uint64_t seed) {
  auto dir = out / ("seed-" + std::to_string(seed));
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const ordered_json& j) { kafa::io::write_file(path, j.dump(2) + "\n"); }

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw kafa::Error(kafa::Errc::io, "no such file: " + path);
}

ordered_json metrics_json(const kafa::Metrics& m) {
  ordered_json j;
  j["accuracy"] = m.accuracy;
  j["rank"] = m.rank;
  j["mean_rank"] = m.mean_rank;
  j["n_images"] = m.n_images;
  return j;
}

std::string metrics_line(const kafa::Metrics& m) {
  std::ostringstream s;
  s << "accuracy " << m.accuracy << " rank " << m.rank << " mean_rank " << m.mean_rank << " (" << m.n_images
    << " images)";
  return s.str();
}

ordered_json adapter_json(const kafa::AdapterConfig& c) {
  ordered_json j;
  j["kind"] = std::string(kafa::kind_name(c.kind));
  j["dim"] = c.dim;
  j["heads"] = c.heads;
  j["inputs"] = kafa::inputs_name(c.inputs);
  j["qkv_bias"] = c.qkv_bias;
  j["seed"] = c.seed;
  return j;
}

ordered_json train_json(const kafa::TrainConfig& c) {
  ordered_json j;
  j["loss_mode"] = c.loss_mode == kafa::LossMode::symmetric ? "symmetric" : "asymmetric";
  j["hnm"] = std::string(kafa::hnm_name(c.hnm));
  j["n_cand"] = c.n_cand;
  j["n_hard"] = c.n_hard;
  j["batch_size"] = c.effective_batch_size();
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["reg_coeff"] = c.reg_coeff;
  j["max_epochs"] = c.max_epochs;
  j["patience"] = c.patience;
  j["momentum_m"] = c.momentum_m;
  j["bank_refresh_period"] = c.bank_refresh_period;
  j["val_k"] = c.val_k;
  j["seed"] = c.seed;
  return j;
}

// ---------------------------------------------------------------------------
// Bank paths shared by train and eval

struct BankPaths {
  std::string image, scene_text, brand, label_text, manifest;

  void add_options(CLI::App* app) {
    app->add_option("--image-bank", image, "image feature bank")->required();
    app->add_option("--scene-text-bank", scene_text, "scene-text feature bank");
    app->add_option("--brand-bank", brand, "brand feature bank");
    app->add_option("--label-bank", label_text, "label-text feature bank")->required();
    app->add_option("--manifest", manifest, "JSON-lines manifest")->required();
  }

  ordered_json json() const {
    ordered_json j;
    j["image_bank"] = image;
    j["scene_text_bank"] = scene_text;
    j["brand_bank"] = brand;
    j["label_bank"] = label_text;
    j["manifest"] = manifest;
    return j;
  }
};

struct LoadedBanks {
  std::optional<kafa::FeatureBank> image, scene_text, brand, label_text;

  kafa::Banks view() const {
    return {image ? &*image : nullptr, scene_text ? &*scene_text : nullptr, brand ? &*brand : nullptr,
            label_text ? &*label_text : nullptr};
  }
};

LoadedBanks load_banks(const BankPaths& p, const std::vector<kafa::Branch>& inputs) {
  LoadedBanks b;
  b.image = kafa::load_bank(p.image, kafa::Modality::image);
  b.label_text = kafa::load_bank(p.label_text, kafa::Modality::label_text);
  for (auto br : inputs) {
    if (br == kafa::Branch::scene_text) {
      if (p.scene_text.empty()) throw kafa::Error(kafa::Errc::invalid_argument, "inputs need --scene-text-bank");
      b.scene_text = kafa::load_bank(p.scene_text, kafa::Modality::scene_text);
    }
    if (br == kafa::Branch::brand) {
      if (p.brand.empty()) throw kafa::Error(kafa::Errc::invalid_argument, "inputs need --brand-bank");
      b.brand = kafa::load_bank(p.brand, kafa::Modality::brand_prompt);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// ingest

struct IngestArgs {
  std::vector<std::string> sources;
  std::string words, out;
};

int run_ingest(const IngestArgs& a) {
  std::vector<kafa::RawBrandEntry> raw;
  for (const auto& s : a.sources) {
    require_file(s);
    auto part = kafa::load_raw_entries(s);
    raw.insert(raw.end(), part.begin(), part.end());
  }
  std::unordered_set<std::string> words;
  if (!a.words.empty()) {
    require_file(a.words);
    words = kafa::load_word_list(a.words);
  }
  kafa::IngestStats st;
  auto kb = kafa::ingest(raw, words, &st);
  std::size_t left = st.raw;
  std::cout << st.raw << " raw entries\n";
  left -= st.empty_name;
  std::cout << "empty name: -" << st.empty_name << " -> " << left << "\n";
  left -= st.single_character;
  std::cout << "single character: -" << st.single_character << " -> " << left << "\n";
  left -= st.common_word;
  std::cout << "common word: -" << st.common_word << " -> " << left << "\n";
  left -= st.duplicate;
  std::cout << "duplicate name: -" << st.duplicate << " -> " << left << "\n";
  std::cout << "descriptions truncated: " << st.truncated << ", filled: " << st.filled << "\n";
  kafa::save_kb(kb, a.out);
  std::cout << kb.size() << " entries retained\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  BankPaths banks;
  std::string out = "runs";
  std::string kind = "attention", inputs = "I+ST+K", loss_mode = "asymmetric", hnm = "full";
  std::size_t heads = 8;
  bool no_qkv_bias = false;
  bool log_negatives = false;
  kafa::TrainConfig cfg;
};

int run_train(TrainArgs& a) {
  kafa::AdapterConfig ac;
  ac.kind = kafa::parse_kind(a.kind);
  ac.inputs = kafa::parse_inputs(a.inputs);
  ac.heads = a.heads;
  ac.qkv_bias = !a.no_qkv_bias;
  ac.seed = a.cfg.seed;
  a.cfg.hnm = kafa::parse_hnm(a.hnm);
  if (a.loss_mode == "symmetric") a.cfg.loss_mode = kafa::LossMode::symmetric;
  else if (a.loss_mode == "asymmetric") a.cfg.loss_mode = kafa::LossMode::asymmetric;
  else throw kafa::Error(kafa::Errc::invalid_argument, "loss-mode must be symmetric or asymmetric");
  a.cfg.validate();

  auto loaded = load_banks(a.banks, ac.inputs);
  ac.dim = loaded.image->dim();
  ac.validate();
  const auto manifest = kafa::load_manifest(a.banks.manifest);
  const auto dir = seed_dir(a.out, a.cfg.seed);

  std::string negatives;
  std::string history = "epoch,step,loss,reg_term,val_accuracy\n";
  kafa::TrainHooks hooks;
  hooks.on_epoch = [&](const kafa::HistoryRow& r) {
    history += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + (r.loss ? fmt_double(*r.loss) : "") + "," +
               (r.reg_term ? fmt_double(*r.reg_term) : "") + "," + fmt_double(r.val_accuracy) + "\n";
    if (r.epoch == 0) std::cout << "zero-shot val accuracy " << r.val_accuracy << "\n";
    else std::cout << "epoch " << r.epoch << " loss " << *r.loss << " val accuracy " << r.val_accuracy << "\n";
  };
  if (a.log_negatives) {
    hooks.on_negatives = [&](const kafa::NegativeEvent& ev) {
      ordered_json j;
      j["epoch"] = ev.epoch;
      j["step"] = ev.step;
      j["image_id"] = ev.image_id;
      j["positive_id"] = ev.positive_id;
      j["query"] = std::vector<double>(ev.query.data(), ev.query.data() + ev.query.size());
      j["candidates"] = ev.candidates;
      j["negatives"] = ev.negatives;
      negatives += j.dump() + "\n";
    };
  }

  const auto result = kafa::train(a.cfg, kafa::init_params(ac), loaded.view(), manifest, hooks);
  kafa::save_checkpoint(result.best, dir / "checkpoint.bin");
  kafa::save_checkpoint(result.last, dir / "last.bin");
  kafa::io::write_file(dir / "history.csv", history);
  if (a.log_negatives) kafa::io::write_file(dir / "negatives.jsonl", negatives);

  ordered_json run;
  run["command"] = "train";
  run["seed"] = a.cfg.seed;
  run["adapter"] = adapter_json(ac);
  run["train"] = train_json(a.cfg);
  run["data"] = a.banks.json();
  run["initial_val"] = metrics_json(result.initial_val);
  run["best_val"] = metrics_json(result.best_val);
  run["best_epoch"] = result.best_epoch;
  run["epochs_run"] = result.history.size() - 1;
  run["steps"] = result.steps;
  run["early_stopped"] = result.early_stopped;
  run["text_recomputations"] = result.text_recomputations;
  write_json(dir / "run.json", run);

  std::cout << "best epoch " << result.best_epoch << ": val " << metrics_line(result.best_val) << "\n";
  std::cout << "wrote " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  BankPaths banks;
  std::string checkpoint, inputs, protocol = "official", split = "test", out = "runs";
  std::size_t k = 100;
  std::uint64_t seed = 0;
  bool per_image = false;
};

int run_eval(const EvalArgs& a) {
  std::optional<kafa::Checkpoint> ck;
  std::vector<kafa::Branch> inputs{kafa::Branch::image};
  if (!a.checkpoint.empty()) {
    require_file(a.checkpoint);
    ck = kafa::load_checkpoint(a.checkpoint);
    inputs = kafa::config_of(ck->params).inputs;
    if (!a.inputs.empty() && kafa::parse_inputs(a.inputs) != inputs)
      throw kafa::Error(kafa::Errc::modality_mismatch,
                        "--inputs " + a.inputs + " but checkpoint was trained on " + kafa::inputs_name(inputs));
  } else if (!a.inputs.empty() && a.inputs != "I") {
    kafa::parse_inputs(a.inputs);
    throw kafa::Error(kafa::Errc::modality_mismatch, "zero-shot evaluation uses the image branch only (--inputs I)");
  }
  auto loaded = load_banks(a.banks, inputs);
  if (ck && kafa::config_of(ck->params).dim != loaded.image->dim())
    throw kafa::Error(kafa::Errc::dimension_mismatch, "checkpoint dim differs from the image bank");
  const auto manifest = kafa::load_manifest(a.banks.manifest);
  const auto images = kafa::images_in_split(manifest, kafa::parse_split(a.split));
  if (images.empty()) throw kafa::Error(kafa::Errc::insufficient_data, "split '" + a.split + "' is empty");

  kafa::EvalProtocol protocol{kafa::parse_protocol(a.protocol), a.k, a.seed};
  protocol.validate();
  const auto sets = kafa::build_candidates(protocol, images);
  std::vector<kafa::ImageRanks> ranks;
  std::optional<kafa::AdapterParams> params;
  if (ck) params = ck->params;
  const auto m = kafa::evaluate_adapter(params, loaded.view(), images, sets, &ranks);

  const std::size_t k =
      protocol.kind == kafa::ProtocolKind::official ? kafa::kOfficialPositives + kafa::kOfficialNegatives : a.k;
  ordered_json j;
  j["protocol"] = std::string(kafa::protocol_name(protocol.kind));
  j["K"] = k;
  j["seed"] = a.seed;
  j["accuracy"] = m.accuracy;
  j["rank"] = m.rank;
  j["mean_rank"] = m.mean_rank;
  j["n_images"] = m.n_images;
  ordered_json cfg;
  cfg["command"] = "eval";
  cfg["checkpoint"] = a.checkpoint;
  cfg["inputs"] = kafa::inputs_name(inputs);
  cfg["protocol"] = j["protocol"];
  cfg["k"] = k;
  cfg["split"] = a.split;
  cfg["seed"] = a.seed;
  cfg["data"] = a.banks.json();
  if (ck) cfg["adapter"] = adapter_json(kafa::config_of(ck->params));
  j["config"] = cfg;
  const auto dir = seed_dir(a.out, a.seed);
  write_json(dir / "metrics.json", j);
  if (a.per_image) {
    std::string csv = "image_id,best_rank,positive_ranks\n";
    for (const auto& r : ranks) {
      csv += r.image_id + "," + std::to_string(*std::min_element(r.positive_ranks.begin(), r.positive_ranks.end())) + ",";
      for (std::size_t i = 0; i < r.positive_ranks.size(); ++i) csv += (i ? ";" : "") + std::to_string(r.positive_ranks[i]);
      csv += "\n";
    }
    kafa::io::write_file(dir / "ranks.csv", csv);
  }
  std::cout << (ck ? "adapter " : "zero-shot ") << metrics_line(m) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// brand

struct BrandArgs {
  std::string regions, scene_texts, kb, prompts, out = "runs";
  std::uint64_t seed = 0;
};

std::unordered_map<std::string, std::string> load_scene_texts(const std::string& path) {
  std::unordered_map<std::string, std::string> out;
  if (path.empty()) return out;
  require_file(path);
  for (const auto& j : kafa::io::read_jsonl(path)) {
    if (!j.contains("image_id")) throw kafa::Error(kafa::Errc::invalid_argument, path + ": row without image_id");
    std::string text;
    if (j.contains("text")) {
      text = j["text"].get<std::string>();
    } else if (j.contains("blocks")) {
      for (const auto& b : j["blocks"]) {
        if (!text.empty()) text += ' ';
        text += b.get<std::string>();
      }
    }
    auto& slot = out[j["image_id"].get<std::string>()];
    if (!slot.empty() && !text.empty()) slot += ' ';
    slot += text;
  }
  return out;
}

int run_brand(const BrandArgs& a) {
  for (const auto* p : {&a.regions, &a.kb, &a.prompts}) require_file(*p);
  const auto kb = kafa::load_kb(a.kb);
  const auto region_bank = kafa::load_bank(a.regions, kafa::Modality::region);
  const auto prompt_bank = kafa::load_bank(a.prompts, kafa::Modality::brand_prompt);
  if (region_bank.dim() != prompt_bank.dim()) throw kafa::Error(kafa::Errc::dimension_mismatch, "region and prompt dims differ");
  const auto prompts = kafa::PromptBank::for_kb(prompt_bank, kb);
  const auto texts = load_scene_texts(a.scene_texts);

  std::string lines;
  std::size_t counts[3] = {0, 0, 0};
  std::size_t ties = 0;
  for (const auto& img : kafa::group_regions(region_bank)) {
    auto it = texts.find(img.image_id);
    const auto pred = kafa::predict_brand(kb, prompts, region_bank, img, it == texts.end() ? std::string() : it->second);
    ++counts[static_cast<int>(pred.decision.path)];
    ties += pred.vision.ad_tie || pred.decision.ad_tie;
    ordered_json j;
    j["image_id"] = pred.image_id;
    j["prediction"] = pred.decision.name;
    j["path"] = std::string(kafa::path_name(pred.decision.path));
    lines += j.dump() + "\n";
  }
  const auto dir = seed_dir(a.out, a.seed);
  kafa::io::write_file(dir / "predictions.jsonl", lines);
  ordered_json s;
  s["command"] = "brand";
  s["seed"] = a.seed;
  s["config"] = {{"regions", a.regions}, {"scene_texts", a.scene_texts}, {"kb", a.kb}, {"prompts", a.prompts}, {"seed", a.seed}};
  s["paths"] = {{"text", counts[0]}, {"vision", counts[1]}, {"ensemble", counts[2]}};
  s["ad_ties"] = ties;
  write_json(dir / "summary.json", s);
  std::cout << "text " << counts[0] << " vision " << counts[1] << " ensemble " << counts[2] << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ocr-blocks, clean-labels

struct OcrArgs {
  std::string input, out = "runs";
  std::uint64_t seed = 0;
};

int run_ocr(const OcrArgs& a) {
  require_file(a.input);
  std::string lines;
  std::size_t kept = 0, dropped = 0;
  for (const auto& row : kafa::io::read_jsonl(a.input)) {
    std::vector<kafa::OcrParagraph> paras;
    for (const auto& p : row.at("paragraphs")) paras.push_back(kafa::parse_paragraph(p));
    std::sort(paras.begin(), paras.end(), [](const auto& x, const auto& y) { return x.order_index < y.order_index; });
    ordered_json j;
    j["image_id"] = row.at("image_id").get<std::string>();
    std::vector<std::string> blocks;
    for (auto& b : kafa::assemble_blocks(paras)) {
      if (b.kept) blocks.push_back(b.text);
      (b.kept ? kept : dropped) += 1;
    }
    j["blocks"] = blocks;
    lines += j.dump() + "\n";
  }
  const auto dir = seed_dir(a.out, a.seed);
  kafa::io::write_file(dir / "blocks.jsonl", lines);
  ordered_json s;
  s["command"] = "ocr-blocks";
  s["seed"] = a.seed;
  s["config"] = {{"input", a.input}, {"font_size_tolerance", kafa::kFontSizeTolerance},
                 {"min_confidence", kafa::kMinBlockConfidence}, {"seed", a.seed}};
  s["blocks_kept"] = kept;
  s["blocks_dropped"] = dropped;
  write_json(dir / "summary.json", s);
  std::cout << kept << " blocks kept, " << dropped << " dropped\n";
  return 0;
}

struct CleanArgs {
  std::string input, rules, out = "runs";
  std::uint64_t seed = 0;
};

int run_clean(const CleanArgs& a) {
  require_file(a.input);
  kafa::CleaningRules rules = kafa::default_cleaning_rules();
  if (!a.rules.empty()) {
    require_file(a.rules);
    auto bytes = kafa::io::read_file(a.rules);
    try {
      rules = kafa::parse_cleaning_rules(kafa::io::json::parse(bytes.begin(), bytes.end()));
    } catch (const kafa::io::json::parse_error& e) {
      throw kafa::Error(kafa::Errc::invalid_argument, a.rules + ": " + e.what());
    }
  }
  rules.seed = a.seed;
  std::string lines;
  std::size_t images = 0, flagged = 0, labels = 0, rejected = 0;
  for (const auto& row : kafa::io::read_jsonl(a.input)) {
    const auto texts = row.at("texts").get<std::vector<std::string>>();
    auto c = kafa::clean_image_labels(row.at("image_id").get<std::string>(), texts, rules);
    ++images;
    flagged += c.all_rejected;
    labels += c.labels.size();
    rejected += c.rejected.size();
    lines += kafa::cleaned_json(c).dump() + "\n";
  }
  const auto dir = seed_dir(a.out, a.seed);
  kafa::io::write_file(dir / "labels.jsonl", lines);
  ordered_json s;
  s["command"] = "clean-labels";
  s["seed"] = a.seed;
  s["config"] = {{"input", a.input}, {"rules", a.rules}, {"seed", a.seed}};
  s["images"] = images;
  s["labels_kept"] = labels;
  s["labels_rejected"] = rejected;
  s["images_all_rejected"] = flagged;
  s["all_rejected_rate"] = images ? static_cast<double>(flagged) / static_cast<double>(images) : 0.0;
  write_json(dir / "summary.json", s);
  std::cout << labels << " labels kept, " << rejected << " rejected, " << flagged << " of " << images
            << " images flagged\n";
  return 0;
}

// ---------------------------------------------------------------------------
// make-synth

struct SynthArgs {
  std::string out = "synth";
  kafa::SynthConfig cfg;
};

int run_synth(const SynthArgs& a) {
  const auto data = kafa::make_synthetic(a.cfg);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  kafa::save_bank(data.image, dir / "image.bank");
  kafa::save_bank(data.scene_text, dir / "scene_text.bank");
  kafa::save_bank(data.brand, dir / "brand.bank");
  kafa::save_bank(data.label_text, dir / "label_text.bank");
  kafa::save_manifest(data.manifest, dir / "manifest.jsonl");
  ordered_json j;
  j["command"] = "make-synth";
  j["seed"] = a.cfg.seed;
  j["config"] = {{"dim", a.cfg.dim},
                 {"image_share", a.cfg.image_share},
                 {"scene_text_share", a.cfg.scene_text_share},
                 {"block_noise", a.cfg.block_noise},
                 {"shared_noise", a.cfg.shared_noise},
                 {"n_train", a.cfg.n_train},
                 {"n_val", a.cfg.n_val},
                 {"n_test", a.cfg.n_test},
                 {"seed", a.cfg.seed}};
  write_json(dir / "synth.json", j);
  std::cout << data.manifest.size() << " images written to " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// hnm-replay: recompute every logged selection by exhaustive ranking

struct ReplayArgs {
  std::string negatives, label_bank;
};

int run_replay(const ReplayArgs& a) {
  require_file(a.negatives);
  const auto bank = kafa::load_bank(a.label_bank, kafa::Modality::label_text);
  std::size_t events = 0, mismatches = 0;
  for (const auto& row : kafa::io::read_jsonl(a.negatives)) {
    ++events;
    const auto q = row.at("query").get<std::vector<double>>();
    const auto cands = row.at("candidates").get<std::vector<std::string>>();
    const auto logged = row.at("negatives").get<std::vector<std::string>>();
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& c : cands) {
      auto v = bank.get(c);
      double s = 0.0;
      for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * static_cast<double>(v[i]);
      scored.emplace_back(s, c);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) {
      return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    std::vector<std::string> expect;
    for (std::size_t i = 0; i < logged.size() && i < scored.size(); ++i) expect.push_back(scored[i].second);
    if (expect != logged) {
      ++mismatches;
      std::cerr << "mismatch at epoch " << row.at("epoch") << " step " << row.at("step") << " image "
                << row.at("image_id").get<std::string>() << "\n";
    }
  }
  std::cout << events << " selections replayed, " << mismatches << " mismatches\n";
  return mismatches ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kafa: knowledge-augmented feature adapters over frozen embedding banks"};
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "filter raw brand entries into a knowledge-base cache");
  c_ingest->add_option("--source", ingest.sources, "JSON-lines raw entries (repeatable)")->required();
  c_ingest->add_option("--words", ingest.words, "common-word list, one per line");
  c_ingest->add_option("--out", ingest.out, "knowledge-base cache path")->required();

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "fine-tune a feature adapter");
  train.banks.add_options(c_train);
  c_train->add_option("--out", train.out, "output root; results go to <out>/seed-<seed>")->capture_default_str();
  c_train->add_option("--kind", train.kind, "attention or mlp")->capture_default_str();
  c_train->add_option("--inputs", train.inputs, "I, I+ST, I+K or I+ST+K")->capture_default_str();
  c_train->add_option("--heads", train.heads)->capture_default_str();
  c_train->add_flag("--no-qkv-bias", train.no_qkv_bias);
  c_train->add_option("--loss-mode", train.loss_mode)->capture_default_str();
  c_train->add_option("--hnm", train.hnm, "none, full, memory_bank or momentum")->capture_default_str();
  c_train->add_option("--n-cand", train.cfg.n_cand)->capture_default_str();
  c_train->add_option("--n-hard", train.cfg.n_hard)->capture_default_str();
  c_train->add_option("--batch-size", train.cfg.batch_size, "0 picks 4 with hard negatives, 8 without")->capture_default_str();
  c_train->add_option("--lr", train.cfg.lr)->capture_default_str();
  c_train->add_option("--weight-decay", train.cfg.weight_decay)->capture_default_str();
  c_train->add_option("--beta1", train.cfg.beta1)->capture_default_str();
  c_train->add_option("--beta2", train.cfg.beta2)->capture_default_str();
  c_train->add_option("--eps", train.cfg.eps)->capture_default_str();
  c_train->add_option("--reg-coeff", train.cfg.reg_coeff)->capture_default_str();
  c_train->add_option("--max-epochs", train.cfg.max_epochs)->capture_default_str();
  c_train->add_option("--patience", train.cfg.patience, "0 disables early stopping")->capture_default_str();
  c_train->add_option("--momentum-m", train.cfg.momentum_m)->capture_default_str();
  c_train->add_option("--bank-refresh-period", train.cfg.bank_refresh_period, "steps; 0 is once per epoch")
      ->capture_default_str();
  c_train->add_option("--val-k", train.cfg.val_k)->capture_default_str();
  c_train->add_option("--seed", train.cfg.seed)->capture_default_str();
  c_train->add_flag("--log-negatives", train.log_negatives, "write negatives.jsonl for hnm-replay");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "retrieval metrics for a checkpoint, or zero-shot without one");
  eval.banks.add_options(c_eval);
  c_eval->add_option("--checkpoint", eval.checkpoint);
  c_eval->add_option("--inputs", eval.inputs, "expected input branches; must match the checkpoint");
  c_eval->add_option("--protocol", eval.protocol, "official or k_candidate")->capture_default_str();
  c_eval->add_option("-K,--k", eval.k, "candidates per image for k_candidate")->capture_default_str();
  c_eval->add_option("--split", eval.split)->capture_default_str();
  c_eval->add_option("--seed", eval.seed)->capture_default_str();
  c_eval->add_option("--out", eval.out)->capture_default_str();
  c_eval->add_flag("--per-image", eval.per_image, "also write ranks.csv with per-image positive ranks");

  BrandArgs brand;
  auto* c_brand = app.add_subcommand("brand", "brand prediction from scene text and region features");
  c_brand->add_option("--regions", brand.regions, "region bank (<image>/region/<k>, <image>/global)")->required();
  c_brand->add_option("--scene-texts", brand.scene_texts, "JSON-lines {image_id, text} or ocr-blocks output");
  c_brand->add_option("--kb", brand.kb, "knowledge-base cache")->required();
  c_brand->add_option("--prompts", brand.prompts, "prompt bank (<name>/prompt/<k>, <name>/ad)")->required();
  c_brand->add_option("--seed", brand.seed)->capture_default_str();
  c_brand->add_option("--out", brand.out)->capture_default_str();

  OcrArgs ocr;
  auto* c_ocr = app.add_subcommand("ocr-blocks", "group OCR paragraphs into confident blocks");
  c_ocr->add_option("--input", ocr.input)->required();
  c_ocr->add_option("--seed", ocr.seed)->capture_default_str();
  c_ocr->add_option("--out", ocr.out)->capture_default_str();

  CleanArgs clean;
  auto* c_clean = app.add_subcommand("clean-labels", "clean annotation texts and pick a ground truth per image");
  c_clean->add_option("--input", clean.input, "JSON-lines {image_id, texts}")->required();
  c_clean->add_option("--rules", clean.rules, "JSON cleaning rules");
  c_clean->add_option("--seed", clean.seed)->capture_default_str();
  c_clean->add_option("--out", clean.out)->capture_default_str();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("make-synth", "write the seeded three-modality fusion dataset");
  c_synth->add_option("--out", synth.out)->capture_default_str();
  c_synth->add_option("--dim", synth.cfg.dim)->capture_default_str();
  c_synth->add_option("--image-share", synth.cfg.image_share)->capture_default_str();
  c_synth->add_option("--scene-text-share", synth.cfg.scene_text_share)->capture_default_str();
  c_synth->add_option("--block-noise", synth.cfg.block_noise)->capture_default_str();
  c_synth->add_option("--shared-noise", synth.cfg.shared_noise)->capture_default_str();
  c_synth->add_option("--n-train", synth.cfg.n_train)->capture_default_str();
  c_synth->add_option("--n-val", synth.cfg.n_val)->capture_default_str();
  c_synth->add_option("--n-test", synth.cfg.n_test)->capture_default_str();
  c_synth->add_option("--seed", synth.cfg.seed)->capture_default_str();

  ReplayArgs replay;
  auto* c_replay = app.add_subcommand("hnm-replay", "check logged hard negatives against exhaustive ranking");
  c_replay->add_option("--negatives", replay.negatives, "negatives.jsonl from train --log-negatives")->required();
  c_replay->add_option("--label-bank", replay.label_bank)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (c_ingest->parsed()) return run_ingest(ingest);
    if (c_train->parsed()) return run_train(train);
    if (c_eval->parsed()) return run_eval(eval);
    if (c_brand->parsed()) return run_brand(brand);
    if (c_ocr->parsed()) return run_ocr(ocr);
    if (c_clean->parsed()) return run_clean(clean);
    if (c_synth->parsed()) return run_synth(synth);
    if (c_replay->parsed()) return run_replay(replay);
  } catch (const kafa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const kafa::io::json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
