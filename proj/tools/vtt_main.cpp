// vtt: data generation, fine-tuning, evaluation, layer sweeps and diagnostics.
#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "vtt/commands.hpp"
#include "vtt/errors.hpp"

namespace {

using namespace vtt;

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> beta, lambda_, gamma, tau;
    std::optional<std::size_t> n_way, k_shot, m_query, episodes, epochs, jobs;
    std::vector<std::string> ablate;
    std::optional<std::string> fusion_variant, tia_variant, method;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "JSON run config; flags override its fields");
        app->add_option("--seed", seed, "master seed")->envname("VTT_SEED");
        app->add_option("--beta", beta, "weight of L_VtT");
        app->add_option("--lambda", lambda_, "conflict window length");
        app->add_option("--gamma", gamma, "emphasis weight");
        app->add_option("--tau", tau, "softmax temperature");
        app->add_option("--n-way", n_way);
        app->add_option("--k-shot", k_shot);
        app->add_option("--m-query", m_query);
        app->add_option("--episodes", episodes);
        app->add_option("--epochs", epochs);
        app->add_option("--jobs", jobs, "episodes trained in parallel");
        app->add_option("--ablate", ablate, "remove a component")
            ->check(CLI::IsMember({"fusion", "tia", "dgso", "gate"}));
        app->add_option("--fusion-variant", fusion_variant)
            ->check(CLI::IsMember({"vt", "vt-reverse", "vt-2d", "v", "t", "vt-mean", "t-mean", "v-mean"}));
        app->add_option("--tia-variant", tia_variant)->check(CLI::IsMember({"replace", "append"}));
        app->add_option("--method", method, "vtt or ce")->check(CLI::IsMember({"vtt", "ce"}));
    }

    RunConfig resolve() const {
        RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
        if (seed) c.seed = *seed;
        if (beta) c.beta = *beta;
        if (lambda_) {
            if (*lambda_ < 1 || *lambda_ != static_cast<double>(static_cast<std::size_t>(*lambda_))) {
                throw ConfigError("config field 'train.lambda' must be a positive integer");
            }
            c.lambda = static_cast<std::size_t>(*lambda_);
        }
        if (gamma) c.gamma = *gamma;
        if (tau) c.tau = *tau;
        if (n_way) c.n_way = *n_way;
        if (k_shot) c.k_shot = *k_shot;
        if (m_query) c.m_query = *m_query;
        if (episodes) c.episodes = *episodes;
        if (epochs) c.epochs = *epochs;
        if (jobs) c.jobs = *jobs;
        for (const auto& a : ablate) {
            if (a == "gate") c.gate = false;
            else if (std::find(c.ablate.begin(), c.ablate.end(), a) == c.ablate.end()) c.ablate.push_back(a);
        }
        if (fusion_variant) c.fusion_variant = *fusion_variant;
        if (tia_variant) c.tia_variant = *tia_variant;
        if (method) c.method = *method;
        c.validate();
        return c;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"VtT fine-tuning for dual-encoder few-shot learning"};
    app.require_subcommand(1);

    Overrides gen_o, train_o, eval_o, sweep_o, show_o;
    std::string out, data, base, checkpoint, report, model, source, metric, other;
    std::optional<std::size_t> stop_after, eval_episodes;
    bool resume = false, zero_shot = false;
    std::string sweep_mode = "zero_shot", sweep_kind = "remove";
    std::size_t corrupt_layer = 0;
    double corrupt_std = 2.0;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic domain-shift dataset");
    gen_o.attach(gen);
    gen->add_option("--out", out, "output directory")->required();

    auto* train = app.add_subcommand("train", "fine-tune one adapter per episode");
    train_o.attach(train);
    train->add_option("--data", data, "dataset directory")->required();
    train->add_option("--out", out, "run directory")->required();
    train->add_option("--base", base, "pretrained dual encoder (default: pretrain on the source domain)");
    train->add_flag("--resume", resume, "continue from the saved per-episode states");
    train->add_option("--stop-after-epoch", stop_after, "stop each episode after this epoch, keeping a resumable state");

    auto* eval = app.add_subcommand("eval", "query accuracy with a 95% confidence interval");
    eval_o.attach(eval);
    eval->add_option("--checkpoint", checkpoint, "training run or model directory")->required();
    eval->add_option("--data", data, "dataset directory")->required();
    eval->add_option("--eval-episodes", eval_episodes, "evaluate only the first n episodes of the run");
    eval->add_flag("--zero-shot", zero_shot, "ignore the trained adapters");
    eval->add_option("--report", report, "write per-episode results as JSON");

    auto* sweep = app.add_subcommand("sweep", "accuracy with each text layer removed or emphasized");
    sweep_o.attach(sweep);
    sweep->add_option("--data", data, "dataset directory")->required();
    sweep->add_option("--out", out, "report directory")->required();
    sweep->add_option("--mode", sweep_mode)->check(CLI::IsMember({"zero_shot", "fine_tuned"}));
    sweep->add_option("--kind", sweep_kind)->check(CLI::IsMember({"remove", "emphasize"}));
    sweep->add_option("--model", model, "dual encoder or training run (default: pretrain)");
    sweep->add_option("--corrupt-layer", corrupt_layer, "add weight noise to this text block first");
    sweep->add_option("--corrupt-std", corrupt_std, "stddev of that noise");

    auto* diag = app.add_subcommand("diagnose", "attention ratio, cross-domain similarity or CKA");
    diag->add_option("--source", source, "model, training run or feature archive")->required();
    diag->add_option("--metric", metric)->required()->check(CLI::IsMember({"attention_ratio", "cross_domain", "cka"}));
    diag->add_option("--data", data, "dataset directory (model sources)");
    diag->add_option("--other", other, "second feature archive for cka");
    diag->add_option("--out", out, "report directory")->required();

    auto* exp = app.add_subcommand("export-features", "write per-layer vision features as an archive");
    exp->add_option("--model", model)->required();
    exp->add_option("--data", data)->required();
    exp->add_option("--out", out)->required();

    auto* show = app.add_subcommand("config", "print the resolved run config");
    show_o.attach(show);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*gen) {
            cmd_gen_data(gen_o.resolve(), out, std::cout);
        } else if (*train) {
            TrainOptions opt;
            if (!base.empty()) opt.base_dir = base;
            opt.resume = resume;
            opt.stop_after_epoch = stop_after;
            cmd_train(train_o.resolve(), data, out, opt, std::cout);
        } else if (*eval) {
            EvalRequest req;
            req.episodes = eval_episodes;
            req.zero_shot = zero_shot;
            if (!report.empty()) req.report = report;
            cmd_eval(checkpoint, data, eval_o.resolve(), req, std::cout);
        } else if (*sweep) {
            SweepRequest req;
            req.kind = parse_sweep_kind(sweep_kind);
            req.mode = parse_sweep_mode(sweep_mode);
            if (!model.empty()) req.model_dir = model;
            req.corrupt_layer = corrupt_layer;
            req.corrupt_std = corrupt_std;
            cmd_sweep(sweep_o.resolve(), data, req, out, std::cout);
        } else if (*diag) {
            std::optional<std::filesystem::path> d, o;
            if (!data.empty()) d = data;
            if (!other.empty()) o = other;
            cmd_diagnose(source, metric, d, o, out, std::cout);
        } else if (*exp) {
            cmd_export_features(model, data, out, std::cout);
        } else if (*show) {
            std::cout << show_o.resolve().dump();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kExitOk;
}
