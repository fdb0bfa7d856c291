// Copyright 2026 the pagedec authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line surface: synth, train, decode, eval, bench.
//
// Exit codes: 0 success, 2 IO/config problems, 3 training divergence,
// 4 model/data mismatch.

#include "pagedec/configio.hpp"
#include "pagedec/evaluate.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace pagedec;

namespace {

std::string find_config_path(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; ++i)
        if (std::string(argv[i]) == "--config") return argv[i + 1];
    return {};
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

PredictionPolicy make_policy(const std::string& kind, int k, double tau,
                             const PredictionPolicy& fallback) {
    if (kind.empty()) return fallback;
    if (kind == "static") return PredictionPolicy::fixed(k);
    if (kind == "dynamic") return PredictionPolicy::confidence(tau);
    throw ConfigError("policy must be \"static\" or \"dynamic\"");
}

struct BenchRow {
    std::string variant;
    EvalReport report;
};

void run_synth(const RunConfig& cfg, const std::string& out_dir, int n_train, int n_val,
               int n_test) {
    make_dataset(cfg.synth, {n_train, n_val, n_test}, out_dir);
    std::cout << (fs::path(out_dir) / "manifest.json").string() << "\n";
}

void run_train(RunConfig cfg, const std::string& data_dir, const std::string& ckpt_out,
               bool resume, const std::string& init_from, const std::string& log_path) {
    const Dataset ds = load_dataset(data_dir);
    TrainState state = [&] {
        if (resume) {
            TrainState st = load_checkpoint(ckpt_out);
            st.train_cfg.steps = cfg.train.steps;
            return st;
        }
        const Vocab vocab = vocab_for_dataset(ds);
        TrainState st = init_train_state(cfg.model, cfg.train, vocab);
        if (!init_from.empty()) load_params_from(st, init_from);
        return st;
    }();

    std::ofstream log_file;
    if (!log_path.empty()) {
        log_file.open(log_path);
        if (!log_file) throw IoError("cannot write " + log_path);
    }
    std::ostream& log = log_path.empty() ? std::cout : log_file;

    const long remaining = std::max<long>(0, cfg.train.steps - state.step);
    train_loop(state, ds, remaining, [&](const StepLog& s) {
        log << "{\"step\":" << s.step << ",\"loss\":" << s.loss << ",\"lr\":" << s.lr
            << ",\"lines_cap\":" << s.lines_cap << "}\n";
    });
    save_checkpoint(state, ckpt_out);
    std::cerr << "checkpoint written to " << ckpt_out << " at step " << state.step << "\n";
}

/// Window size and head count fall back to the values the checkpoint was
/// trained with when no flag overrides them.
EvalOptions fill_from_checkpoint(EvalOptions opt, const TrainState& state) {
    if (opt.w <= 0) opt.w = state.train_cfg.w;
    if (opt.m <= 0) opt.m = state.train_cfg.m;
    return opt;
}

void run_decode(const std::string& ckpt, const std::string& image_path, const EvalOptions& opt_in,
                const std::string& trace_path) {
    const TrainState state = load_checkpoint(ckpt);
    const EvalOptions opt = fill_from_checkpoint(opt_in, state);
    const GrayImage image = read_pgm(image_path);
    const ModelRef model{state.model_cfg, state.params, state.vocab};
    const DecodeTrace trace = decode_variant(model, image, opt);
    std::cout << decode_tokens(state.vocab, trace.emitted) << "\n";
    if (!trace_path.empty()) write_text_file(trace_path, trace_to_json(trace) + "\n");
}

void run_eval(const std::string& ckpt, const std::string& data_dir, const std::string& split,
              const EvalOptions& opt_in, const std::string& report_path,
              const std::string& csv_path) {
    const TrainState state = load_checkpoint(ckpt);
    const EvalOptions opt = fill_from_checkpoint(opt_in, state);
    const EvalReport report = evaluate(state, data_dir, split, opt);
    std::fprintf(stderr, "%s %s: cer %.3f%% wer %.3f%% time %.4fs iters %.1f over %ld samples\n",
                 variant_name(opt.variant).c_str(), split.c_str(), report.mean_cer_pct,
                 report.mean_wer_pct, report.mean_time_s, report.mean_iterations,
                 report.total_samples);
    if (report_path.empty())
        std::cout << report.to_json() << "\n";
    else
        write_text_file(report_path, report.to_json() + "\n");
    if (!csv_path.empty()) write_text_file(csv_path, report.to_csv());
}

void run_bench(const std::vector<std::string>& ckpt_specs, const std::string& data_dir,
               const std::string& split, const std::vector<std::string>& variants,
               const EvalOptions& base_opt, const std::string& out_path) {
    std::map<std::string, std::string> ckpts;
    for (const auto& spec : ckpt_specs) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--ckpt expects VARIANT=DIR, got \"" + spec + "\"");
        ckpts[spec.substr(0, eq)] = spec.substr(eq + 1);
    }

    std::vector<BenchRow> rows;
    std::vector<std::string> skipped;
    for (const auto& name : variants) {
        const Variant variant = variant_from_name(name);
        auto it = ckpts.find(name);
        if (it == ckpts.end() || !fs::exists(fs::path(it->second) / "model.json")) {
            skipped.push_back(name);
            continue;
        }
        const TrainState state = load_checkpoint(it->second);
        EvalOptions opt = base_opt;
        opt.variant = variant;
        opt.w = state.train_cfg.w;
        opt.m = state.train_cfg.m;
        rows.push_back({name, evaluate(state, data_dir, split, opt)});
    }

    const BenchRow* dan = nullptr;
    for (const auto& row : rows)
        if (row.variant == "dan") dan = &row;

    std::printf("%-10s %8s %8s %10s %10s %9s %11s\n", "variant", "cer%", "wer%", "time_s",
                "iters", "speedup", "iter_ratio");
    nlohmann::json jrows = nlohmann::json::array();
    for (const auto& row : rows) {
        const double speedup =
            dan ? dan->report.mean_time_s / std::max(1e-12, row.report.mean_time_s) : 0.0;
        const double iter_ratio =
            dan ? dan->report.mean_iterations / std::max(1e-12, row.report.mean_iterations) : 0.0;
        std::printf("%-10s %8.3f %8.3f %10.4f %10.1f %9.2f %11.2f\n", row.variant.c_str(),
                    row.report.mean_cer_pct, row.report.mean_wer_pct, row.report.mean_time_s,
                    row.report.mean_iterations, speedup, iter_ratio);
        jrows.push_back({{"variant", row.variant},
                         {"cer_pct", row.report.mean_cer_pct},
                         {"wer_pct", row.report.mean_wer_pct},
                         {"mean_time_s", row.report.mean_time_s},
                         {"mean_iterations", row.report.mean_iterations},
                         {"speedup_vs_dan", dan ? nlohmann::json(speedup) : nlohmann::json()},
                         {"iter_ratio_vs_dan",
                          dan ? nlohmann::json(iter_ratio) : nlohmann::json()}});
    }
    for (const auto& name : skipped) std::printf("%-10s skipped (no checkpoint)\n", name.c_str());

    if (!out_path.empty()) {
        const nlohmann::json out{{"split", split}, {"rows", jrows}, {"skipped", skipped}};
        write_text_file(out_path, out.dump(2) + "\n");
    }
}

}  // namespace

int main(int argc, char** argv) {
    try {
        RunConfig cfg;
        const std::string config_path = find_config_path(argc, argv);
        if (!config_path.empty()) cfg = load_run_config(config_path);

        CLI::App app{"Synthetic page-level text recognition with windowed multi-token decoding"};
        app.require_subcommand(1);
        std::string config_dummy;
        app.add_option("--config", config_dummy, "JSON run config; flags override its values");

        // shared decode/policy flags
        std::string variant_name_flag = "dan";
        int w_flag = 0, m_flag = 0, k_flag = 1, jobs = 1;
        double tau_flag = 0.9;
        std::string policy_kind;
        long max_tokens = 5000, max_iterations = 5000;
        auto add_policy_flags = [&](CLI::App* cmd) {
            cmd->add_option("--variant", variant_name_flag,
                            "decoding strategy: dan|wdan|mtdan|meta|fasterdan")
                ->capture_default_str();
            cmd->add_option("--w", w_flag, "window size (windowed variants)");
            cmd->add_option("--m", m_flag, "projection heads used (multi-token variants)");
            cmd->add_option("--policy", policy_kind, "prediction policy: static|dynamic");
            cmd->add_option("--k", k_flag, "tokens kept per iteration (static policy)")
                ->capture_default_str();
            cmd->add_option("--tau", tau_flag, "confidence threshold (dynamic policy)")
                ->capture_default_str();
            cmd->add_option("--max-tokens", max_tokens, "decode token cap")->capture_default_str();
            cmd->add_option("--max-iterations", max_iterations, "decode iteration cap")
                ->capture_default_str();
        };
        auto make_opts = [&]() {
            EvalOptions opt;
            opt.variant = variant_from_name(variant_name_flag);
            opt.w = w_flag;  // 0 = take from the checkpoint
            opt.m = m_flag;
            opt.policy = make_policy(policy_kind, k_flag, tau_flag, cfg.policy);
            opt.caps.max_tokens = max_tokens;
            opt.caps.max_iterations = max_iterations;
            opt.jobs = jobs;
            return opt;
        };

        // synth
        auto* synth = app.add_subcommand("synth", "Generate a synthetic page dataset");
        std::string out_dir = cfg.data_dir;
        int n_train = 0, n_val = 0, n_test = 0;
        synth->add_option("--out", out_dir, "output dataset directory");
        synth->add_option("--train", n_train, "training pages")->capture_default_str();
        synth->add_option("--val", n_val, "validation pages")->capture_default_str();
        synth->add_option("--test", n_test, "test pages")->capture_default_str();
        synth->add_option("--corpus", cfg.synth.corpus, "word source text");
        synth->add_option("--glyph-height", cfg.synth.glyph_height, "glyph height px")
            ->capture_default_str();
        synth->add_option("--min-lines", cfg.synth.min_lines, "min lines per page")
            ->capture_default_str();
        synth->add_option("--max-lines", cfg.synth.max_lines, "max lines per page")
            ->capture_default_str();
        synth->add_option("--max-chars", cfg.synth.max_chars_per_line, "max characters per line")
            ->capture_default_str();
        synth->add_option("--columns", cfg.synth.columns, "1 or 2 text columns")
            ->capture_default_str();
        synth->add_option("--noise", cfg.synth.noise, "uniform pixel noise amplitude")
            ->capture_default_str();
        synth->add_option("--seed", cfg.synth.seed, "generator seed")->capture_default_str();

        // train
        auto* train = app.add_subcommand("train", "Train a model on a dataset");
        std::string data_dir = cfg.data_dir, ckpt_dir = cfg.ckpt_dir;
        std::string init_from, log_path, train_variant;
        bool resume = false;
        train->add_option("--data", data_dir, "dataset directory");
        train->add_option("--ckpt-out", ckpt_dir, "checkpoint output directory");
        train->add_option("--variant", train_variant, "dan|wdan|mtdan|meta|fasterdan");
        train->add_option("--w", cfg.train.w, "query window size")->capture_default_str();
        train->add_option("--m", cfg.train.m, "projection heads")->capture_default_str();
        train->add_option("--steps", cfg.train.steps, "total training steps")
            ->capture_default_str();
        train->add_option("--batch", cfg.train.batch, "batch size")->capture_default_str();
        train->add_option("--lr", cfg.train.lr, "learning rate")->capture_default_str();
        train->add_option("--seed", cfg.train.seed, "training seed")->capture_default_str();
        train->add_option("--channels", cfg.model.channels, "feature width C_f")
            ->capture_default_str();
        train->add_option("--layers", cfg.model.layers, "decoder layers")->capture_default_str();
        train->add_option("--dropout", cfg.model.dropout, "training dropout rate")
            ->capture_default_str();
        train->add_option("--curriculum-start", cfg.train.curriculum.start_lines,
                          "curriculum starting line count")
            ->capture_default_str();
        train->add_option("--curriculum-end", cfg.train.curriculum.end_lines,
                          "curriculum final line count")
            ->capture_default_str();
        train->add_option("--curriculum-ramp", cfg.train.curriculum.ramp,
                          "fraction of steps spent ramping")
            ->capture_default_str();
        train->add_option("--init-from", init_from,
                          "load parameters from another checkpoint (transfer init)");
        train->add_flag("--resume", resume, "continue from --ckpt-out");
        train->add_option("--log", log_path, "write the JSONL step log here instead of stdout");

        // decode
        auto* decode = app.add_subcommand("decode", "Decode a single page image");
        std::string ckpt_in = cfg.ckpt_dir, image_path, trace_path;
        decode->add_option("--ckpt", ckpt_in, "checkpoint directory");
        decode->add_option("--image", image_path, "input PGM page")->required();
        decode->add_option("--trace", trace_path, "write the decode trace JSON here");
        add_policy_flags(decode);

        // eval
        auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
        std::string split = "test", report_path = cfg.out_path, csv_path;
        eval->add_option("--ckpt", ckpt_in, "checkpoint directory");
        eval->add_option("--data", data_dir, "dataset directory");
        eval->add_option("--split", split, "train|val|test")->capture_default_str();
        eval->add_option("--report", report_path, "write the report JSON here");
        eval->add_option("--csv", csv_path, "write per-sample rows as CSV");
        eval->add_option("--jobs", jobs, "evaluation worker threads")->capture_default_str();
        add_policy_flags(eval);

        // bench
        auto* bench = app.add_subcommand("bench", "Compare decoding strategies on one split");
        std::vector<std::string> ckpt_specs, variant_list{"dan"};
        std::string bench_out = cfg.out_path;
        bench->add_option("--ckpt", ckpt_specs, "VARIANT=DIR checkpoint mapping (repeatable)");
        bench->add_option("--variants", variant_list, "strategies to benchmark")
            ->delimiter(',')
            ->capture_default_str();
        bench->add_option("--data", data_dir, "dataset directory");
        bench->add_option("--split", split, "train|val|test")->capture_default_str();
        bench->add_option("--out", bench_out, "write the benchmark JSON here");
        bench->add_option("--jobs", jobs, "evaluation worker threads")->capture_default_str();
        add_policy_flags(bench);

        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e);
            return code == 0 ? 0 : 2;
        }

        if (synth->parsed()) {
            if (out_dir.empty()) throw ConfigError("synth needs --out (or paths.data)");
            if (n_train + n_val + n_test == 0) {
                n_train = 8;
                n_val = 2;
                n_test = 2;
            }
            run_synth(cfg, out_dir, n_train, n_val, n_test);
        } else if (train->parsed()) {
            if (!train_variant.empty()) cfg.train.variant = variant_from_name(train_variant);
            if (data_dir.empty()) throw ConfigError("train needs --data");
            if (ckpt_dir.empty()) throw ConfigError("train needs --ckpt-out");
            cfg.train.validate();
            run_train(cfg, data_dir, ckpt_dir, resume, init_from, log_path);
        } else if (decode->parsed()) {
            if (ckpt_in.empty()) throw ConfigError("decode needs --ckpt");
            run_decode(ckpt_in, image_path, make_opts(), trace_path);
        } else if (eval->parsed()) {
            if (ckpt_in.empty()) throw ConfigError("eval needs --ckpt");
            if (data_dir.empty()) throw ConfigError("eval needs --data");
            run_eval(ckpt_in, data_dir, split, make_opts(), report_path, csv_path);
        } else if (bench->parsed()) {
            if (data_dir.empty()) throw ConfigError("bench needs --data");
            run_bench(ckpt_specs, data_dir, split, variant_list, make_opts(), bench_out);
        }
        return 0;
    } catch (const DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const MismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
