/*
 * Copyright 2026 The cerespt Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// ceres: data generation, pretraining, finetuning, evaluation and corpus
// export from the command line.

#include <iostream>
#include <random>

#include "CLI11.hpp"

#include "cerespt/pipeline.hpp"
#include "cerespt/selfcheck.hpp"

namespace {

using namespace cerespt;

constexpr int kUsageError = 2;

// flags > config file > defaults
RunConfig resolve_config(const std::string& file, const std::vector<std::string>& sets, RunConfig base = {}) {
  if (!file.empty()) base = load_config(file, base);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + kv + "'");
    set_config_value(base, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  return base;
}

int cmd_gen_data(std::size_t sessions, std::optional<std::uint64_t> seed, double noise, const std::string& out,
                 double desk_factor, std::uint64_t world_seed, std::optional<double> title_len,
                 const std::string& vocab_out) {
  GenConfig cfg;
  cfg.num_sessions = sessions;
  cfg.seed = seed ? *seed : std::random_device{}();
  cfg.noise_rate = noise;
  cfg.desk_factor = desk_factor;
  cfg.world_seed = world_seed;
  if (title_len) cfg.title_len_mean = *title_len;
  cfg.validate();
  const Catalog cat = build_catalog(cfg);
  write_sessions(out, generate(cfg, cat));
  if (!vocab_out.empty()) world_vocab(cat).save(vocab_out);
  nlohmann::ordered_json j;
  j["command"] = "gen-data";
  j["version"] = kVersion;
  j["seed"] = cfg.seed;
  j["world_seed"] = cfg.world_seed;
  j["sessions"] = cfg.num_sessions;
  j["noise_rate"] = cfg.noise_rate;
  j["desk_factor"] = cfg.desk_factor;
  j["title_len_mean"] = cfg.title_len_mean;
  std::ofstream(out + ".manifest.json") << j.dump(2) << '\n';
  std::cout << "wrote " << cfg.num_sessions << " sessions to " << out << " (seed " << cfg.seed << ")\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto rep = full_model_gradcheck(seed);
  std::cout << "checked " << rep.checked << " partial derivatives\n"
            << "max relative error " << rep.max_rel << " at " << rep.worst.param << "[" << rep.worst.index
            << "] (analytic " << rep.worst.analytic << ", numeric " << rep.worst.numeric << ")\n";
  const bool ok = rep.max_rel < 1e-4;
  std::cout << (ok ? "PASS" : "FAIL") << '\n';
  return ok ? 0 : 1;
}

int cmd_selftest() {
  bool ok = true;
  for (const auto& c : selftest()) {
    std::cout << (c.ok ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : ": " + c.detail) << '\n';
    ok = ok && c.ok;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ceres: graph-conditioned session pretraining and retrieval"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate synthetic sessions");
  std::size_t gen_sessions = 1000;
  std::optional<std::uint64_t> gen_seed;
  double gen_noise = 0.3, gen_desk = 0.25;
  std::uint64_t gen_world = 1;
  std::optional<double> gen_title;
  std::string gen_out, gen_vocab;
  gen->add_option("--sessions", gen_sessions, "Number of sessions")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Session seed (drawn and recorded when absent)");
  gen->add_option("--noise", gen_noise, "Off-topic noise rate in [0,1]")->capture_default_str();
  gen->add_option("--desk-factor", gen_desk, "Scale applied to bullet lengths")->capture_default_str();
  gen->add_option("--world-seed", gen_world, "Catalog seed")->capture_default_str();
  gen->add_option("--title-len", gen_title, "Mean title length in tokens");
  gen->add_option("--out", gen_out, "Output sessions file")->required();
  gen->add_option("--vocab-out", gen_vocab, "Also write the vocabulary of the synthetic world");

  std::string config_file, data, out, ckpt, task, vocab_file, format;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  bool fresh = false;

  auto* pre = app.add_subcommand("pretrain", "Joint masked-token pretraining");
  pre->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
  pre->add_option("--data", data, "Sessions file")->required();
  pre->add_option("--out", out, "Output directory")->required();
  pre->add_option("--vocab", vocab_file, "Vocabulary file (default: built from the data)");
  pre->add_option("--set", sets, "Override a config key (key=value)");
  pre->add_option("--seed", seed, "Overrides pretrain.seed");

  auto* fin = app.add_subcommand("finetune", "Retrieval finetuning over the learning-rate grid");
  fin->add_option("--task", task, "product_search | query_search | entity_linking")->required();
  fin->add_option("--ckpt", ckpt, "Checkpoint file or directory")->required();
  fin->add_option("--data", data, "Sessions file or directory with sessions.jsonl")->required();
  fin->add_option("--out", out, "Output directory")->required();
  fin->add_option("--config", config_file, "key = value overrides")->check(CLI::ExistingFile);
  fin->add_option("--set", sets, "Override a config key (key=value)");
  fin->add_option("--seed", seed, "Overrides finetune.seed");
  fin->add_flag("--fresh-session-encoder", fresh, "Re-draw graph, latent and conditional layers first");

  auto* ev = app.add_subcommand("eval", "Rank the test split and report metrics");
  ev->add_option("--task", task, "product_search | query_search | entity_linking")->required();
  ev->add_option("--ckpt", ckpt, "Finetuned checkpoint file or directory")->required();
  ev->add_option("--data", data, "Sessions file or directory with sessions.jsonl")->required();
  ev->add_option("--out", out, "Output directory")->required();
  ev->add_option("--set", sets, "Override a config key (key=value)");

  auto* exp = app.add_subcommand("export-corpus", "Write a flat text corpus");
  exp->add_option("--format", format, "product | sqsp | session")->required();
  exp->add_option("--data", data, "Sessions file")->required();
  exp->add_option("--out", out, "Output file")->required();

  auto* gc = app.add_subcommand("gradcheck", "Full-model finite-difference gradient check");
  std::uint64_t gc_seed = 1;
  gc->add_option("--seed", gc_seed, "Initialization seed")->capture_default_str();

  auto* st = app.add_subcommand("selftest", "Metric oracles and masking invariants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsageError;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_sessions, gen_seed, gen_noise, gen_out, gen_desk, gen_world, gen_title, gen_vocab);
    }
    if (pre->parsed()) {
      RunConfig cfg = resolve_config(config_file, sets);
      if (seed) cfg.pretrain.seed = *seed;
      const auto sessions = read_data(data);
      Vocab vocab = vocab_file.empty() ? build_vocab(sessions) : Vocab::load(vocab_file);
      const auto sum = run_pretrain(cfg, sessions, vocab, out);
      std::cout << "pretrained " << sum.steps << " steps (" << sum.skipped << " skipped); last loss_intra "
                << sum.last.loss_intra << " loss_gmlm " << sum.last.loss_gmlm << '\n';
      return 0;
    }
    if (fin->parsed()) {
      LoadedModel lm = load_model(ckpt);
      lm.cfg = resolve_config(config_file, sets, lm.cfg);
      if (seed) lm.cfg.finetune.seed = *seed;
      const auto res = run_finetune(parse_task(task), lm, read_data(data), out, {fresh});
      for (const auto& r : res.runs) {
        std::cout << "lr " << r.lr << " val MAP@1 by epoch:";
        for (double v : r.val_map1) std::cout << ' ' << v;
        std::cout << '\n';
      }
      std::cout << "best lr " << res.best_lr << " epoch " << res.best_epoch << " val MAP@1 " << res.best_val_map1
                << '\n';
      return 0;
    }
    if (ev->parsed()) {
      LoadedModel lm = load_model(ckpt);
      lm.cfg = resolve_config("", sets, lm.cfg);
      std::cout << run_eval(parse_task(task), lm, read_data(data), out).table();
      return 0;
    }
    if (exp->parsed()) {
      export_corpus(read_data(data), parse_corpus_format(format), out);
      return 0;
    }
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
    if (st->parsed()) return cmd_selftest();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kUsageError;
}
