#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "advshield/attacks.hpp"
#include "advshield/data.hpp"
#include "advshield/evaluation.hpp"
#include "advshield/experiment.hpp"
#include "advshield/io.hpp"
#include "advshield/training.hpp"
#include "advshield/uad.hpp"

using namespace advshield;
using nlohmann::ordered_json;

namespace {

SynthSpec synth_spec_from_file(const std::string& path) {
    auto kv = parse_key_values(io::read_text_file(path));
    SynthSpec s;
    if (kv.count("num_classes")) s.num_classes = std::stoi(kv.at("num_classes"));
    if (kv.count("height")) s.dims.height = std::stoi(kv.at("height"));
    if (kv.count("width")) s.dims.width = std::stoi(kv.at("width"));
    if (kv.count("channels")) s.dims.channels = std::stoi(kv.at("channels"));
    if (kv.count("sigma")) s.noise_sigma = std::stod(kv.at("sigma"));
    if (kv.count("contrast")) s.contrast = std::stod(kv.at("contrast"));
    if (kv.count("samples_per_class")) s.samples_per_class = std::stoi(kv.at("samples_per_class"));
    if (kv.count("seed")) s.seed = std::stoull(kv.at("seed"));
    return s;
}

TrainConfig train_config_from_file(const std::string& path) {
    auto kv = parse_key_values(io::read_text_file(path));
    TrainConfig c;
    if (kv.count("epochs")) c.epochs = std::stoi(kv.at("epochs"));
    if (kv.count("batch_size")) c.batch_size = std::stoi(kv.at("batch_size"));
    if (kv.count("lr")) c.lr = std::stof(kv.at("lr"));
    if (kv.count("lambda")) c.lambda = std::stof(kv.at("lambda"));
    if (kv.count("train_eps_lo")) c.train_eps_lo = std::stof(kv.at("train_eps_lo"));
    if (kv.count("train_eps_hi")) c.train_eps_hi = std::stof(kv.at("train_eps_hi"));
    if (kv.count("warmup_epochs")) c.warmup_epochs = std::stoi(kv.at("warmup_epochs"));
    if (kv.count("seed")) c.seed = std::stoull(kv.at("seed"));
    return c;
}

std::vector<LayerSpec> hidden_from_file(const std::string& path) {
    auto kv = parse_key_values(io::read_text_file(path));
    std::vector<LayerSpec> hidden{LayerSpec::dense(32), LayerSpec::dense(16)};
    if (kv.count("hidden")) {
        hidden.clear();
        std::istringstream in(kv.at("hidden"));
        std::string item;
        while (std::getline(in, item, ',')) {
            auto c1 = item.find(':');
            auto c2 = item.find(':', c1 == std::string::npos ? c1 : c1 + 1);
            if (c1 == std::string::npos) throw ConfigError("config: bad layer spec " + item);
            std::string kind = item.substr(0, c1);
            if (kind == "dense")
                hidden.push_back(LayerSpec::dense(std::stoi(item.substr(c1 + 1))));
            else if (kind == "conv" && c2 != std::string::npos)
                hidden.push_back(LayerSpec::conv(std::stoi(item.substr(c1 + 1, c2 - c1 - 1)),
                                                 std::stoi(item.substr(c2 + 1))));
            else
                throw ConfigError("config: bad layer spec " + item);
        }
    }
    return hidden;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"advshield: adversarial training, detection and risk evaluation"};
    app.require_subcommand(1);

    // data gen / data split
    auto* data_cmd = app.add_subcommand("data", "dataset generation and splitting");
    data_cmd->require_subcommand(1);

    std::string spec_path, out_dir, data_dir;
    auto* gen = data_cmd->add_subcommand("gen", "generate a synthetic labeled pool");
    gen->add_option("--spec", spec_path, "synth spec key=value file")->required();
    gen->add_option("--out", out_dir, "output directory")->required();

    int n_train = 0, n_unlabeled = 0, n_test = 0;
    std::uint64_t seed = 0;
    std::string split_out;
    auto* split = data_cmd->add_subcommand("split", "balanced labeled/unlabeled/test split");
    split->add_option("--data", data_dir, "directory with pool.adtn + manifest.json")->required();
    split->add_option("--train", n_train)->required();
    split->add_option("--unlabeled", n_unlabeled)->required();
    split->add_option("--test", n_test)->required();
    split->add_option("--seed", seed);
    split->add_option("--out", split_out, "output directory (default: data dir)");

    // train
    std::string regime_str = "nt", config_path, model_out;
    auto* tr = app.add_subcommand("train", "train a model");
    tr->add_option("--regime", regime_str, "nt|at|ssat")->required();
    tr->add_option("--config", config_path, "train config key=value file")->required();
    tr->add_option("--data", data_dir, "split dataset directory")->required();
    tr->add_option("--out", model_out, "output checkpoint path")->required();

    // attack
    std::string method_str, model_path, data_file, attack_out;
    float eps = 0.0f, step_size = 0.0f, cw_c = 1.0f, cw_lr = 0.01f;
    int steps = 10;
    auto* atk = app.add_subcommand("attack", "craft adversarial samples");
    atk->add_option("--method", method_str, "fgsm|pgd|cw")->required();
    atk->add_option("--eps", eps);
    atk->add_option("--steps", steps);
    atk->add_option("--step-size", step_size);
    atk->add_option("--c", cw_c, "C&W constant");
    atk->add_option("--cw-lr", cw_lr);
    atk->add_option("--seed", seed);
    atk->add_option("--model", model_path)->required();
    atk->add_option("--data", data_file, "labeled tensor container")->required();
    atk->add_option("--out", attack_out, "adversarial archive path")->required();

    // fit-uad
    std::string det_out, fit_date;
    int components = 1;
    double diag_reg = -1.0;
    auto* fu = app.add_subcommand("fit-uad", "fit per-class GMMs on clean features");
    fu->add_option("--model", model_path)->required();
    fu->add_option("--data", data_file, "clean labeled tensor container")->required();
    fu->add_option("--out", det_out)->required();
    fu->add_option("--components", components);
    fu->add_option("--diag-reg", diag_reg);
    fu->add_option("--seed", seed);
    fu->add_option("--date", fit_date, "provenance note stored in the detector file");

    // calibrate
    std::string det_path, det_out2;
    double percentile = 5.0;
    auto* cal = app.add_subcommand("calibrate", "set per-class rejection thresholds");
    cal->add_option("--detector", det_path)->required();
    cal->add_option("--model", model_path)->required();
    cal->add_option("--data", data_file, "held-out clean tensor container")->required();
    cal->add_option("--percentile", percentile);
    cal->add_option("--out", det_out2)->required();

    // infer
    std::string infer_out;
    auto* inf = app.add_subcommand("infer", "defended inference");
    inf->add_option("--model", model_path)->required();
    inf->add_option("--detector", det_path)->required();
    inf->add_option("--data", data_file)->required();
    inf->add_option("--out", infer_out, "CSV output (default: stdout)");

    // eval
    std::string clean_file, adv_file, eval_out;
    bool raw_mode = false;
    auto* ev = app.add_subcommand("eval", "accuracy, AUPRC and risk reports");
    ev->add_option("--model", model_path)->required();
    ev->add_option("--detector", det_path);
    ev->add_option("--clean", clean_file)->required();
    ev->add_option("--adv", adv_file)->required();
    ev->add_flag("--raw", raw_mode, "use all attacks for AUPRC, not just successful ones");
    ev->add_option("--out", eval_out, "output directory")->required();

    // run
    std::string plan_path, run_out;
    auto* rn = app.add_subcommand("run", "execute a full experiment plan");
    rn->add_option("--config", plan_path, "plan key=value file")->required();
    auto* seed_opt = rn->add_option("--seed", seed, "override plan seed");
    rn->add_option("--out", run_out, "override plan out_dir");

    // curves
    std::string records_dir, curves_out;
    auto* cv = app.add_subcommand("curves", "accuracy-vs-budget curve CSVs");
    cv->add_option("--records", records_dir)->required();
    cv->add_option("--out", curves_out)->required();

    // project
    std::string proj_out;
    auto* pj = app.add_subcommand("project", "2-D principal-component feature projection");
    pj->add_option("--model", model_path)->required();
    pj->add_option("--data", data_file, "clean tensor container")->required();
    pj->add_option("--adv", adv_file, "optional adversarial tensor container");
    pj->add_option("--out", proj_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            SynthSpec s = synth_spec_from_file(spec_path);
            Batch pool = generate_synthetic(s);
            save_batch(pool, out_dir + "/pool.adtn");
            DatasetManifest m;
            m.name = "synthetic";
            for (int c = 0; c < s.num_classes; ++c) m.class_names.push_back("class" + std::to_string(c));
            m.dims = s.dims;
            m.split_names = {"pool"};
            m.split_counts = {pool.count};
            m.seed = s.seed;
            io::write_text_file(out_dir + "/manifest.json", m.to_json());
            std::cout << "wrote " << pool.count << " samples to " << out_dir << "\n";
        } else if (split->parsed()) {
            DatasetManifest m = DatasetManifest::from_json(io::read_text_file(data_dir + "/manifest.json"));
            Batch pool = load_batch(data_dir + "/pool.adtn");
            int num_classes = static_cast<int>(m.class_names.size());
            Splits s = split_balanced(pool, n_train, n_unlabeled, n_test, num_classes, seed);
            std::string out = split_out.empty() ? data_dir : split_out;
            save_batch(s.train, out + "/train.adtn");
            save_batch(s.unlabeled, out + "/unlabeled.adtn");
            save_batch(s.test, out + "/test.adtn");
            ordered_json audit;
            audit["labels"] = s.unlabeled_audit;
            io::write_text_file(out + "/unlabeled_audit.json", audit.dump() + "\n");
            m.split_names = {"train", "unlabeled", "test"};
            m.split_counts = {n_train, n_unlabeled, n_test};
            m.seed = seed;
            io::write_text_file(out + "/manifest.json", m.to_json());
            std::cout << "split " << n_train << "/" << n_unlabeled << "/" << n_test << " into " << out << "\n";
        } else if (tr->parsed()) {
            TrainConfig cfg = train_config_from_file(config_path);
            cfg.regime = regime_from_string(regime_str);
            DatasetManifest m = DatasetManifest::from_json(io::read_text_file(data_dir + "/manifest.json"));
            Batch train_set = load_batch(data_dir + "/train.adtn");
            std::optional<Batch> unl;
            if (cfg.regime == Regime::Ssat) unl = load_batch(data_dir + "/unlabeled.adtn");
            NetConfig nc;
            nc.input = m.dims;
            nc.hidden = hidden_from_file(config_path);
            nc.num_classes = static_cast<int>(m.class_names.size());
            nc.seed = cfg.seed;
            TrainResult res = train(DiffNet::build(nc), train_set, unl, cfg);
            save_checkpoint(res.net, model_out);
            io::write_text_file(model_out + ".loss.csv", trace_to_csv(res.trace));
            std::cout << "trained " << regime_str << ", final loss "
                      << res.trace.back().total_loss << ", saved to " << model_out << "\n";
        } else if (atk->parsed()) {
            DiffNet net = load_checkpoint(model_path);
            Batch data = load_batch(data_file);
            AttackSpec spec;
            spec.method = attack_method_from_string(method_str);
            spec.eps = eps;
            spec.steps = spec.method == AttackMethod::Fgsm ? 1 : steps;
            spec.step_size = spec.method == AttackMethod::Fgsm ? eps : step_size;
            spec.cw_constant = cw_c;
            spec.cw_lr = cw_lr;
            spec.seed = seed;
            AdvBatch adv = craft(net, data, spec);
            save_adv_batch(adv, attack_out, attack_out + ".csv");
            std::cout << adv.success_count() << "/" << adv.perturbed.count
                      << " successful attacks, saved to " << attack_out << "\n";
        } else if (fu->parsed()) {
            DiffNet net = load_checkpoint(model_path);
            Batch data = load_batch(data_file);
            EmOptions em;
            em.components = components;
            em.diag_reg = diag_reg;
            em.seed = seed;
            UadModel uad = fit_uad(net, data, em);
            uad.fit_date = fit_date;
            save_detector(uad, det_out);
            std::cout << "fitted " << uad.num_classes() << " class GMMs, saved to " << det_out << "\n";
        } else if (cal->parsed()) {
            DiffNet net = load_checkpoint(model_path);
            UadModel uad = load_detector(det_path);
            Batch data = load_batch(data_file);
            uad = calibrate_thresholds(uad, net, data, percentile);
            save_detector(uad, det_out2);
            std::cout << "calibrated thresholds at percentile " << percentile << "\n";
        } else if (inf->parsed()) {
            DiffNet net = load_checkpoint(model_path);
            UadModel uad = load_detector(det_path);
            Batch data = load_batch(data_file);
            auto outcomes = defended_inference_batch(net, uad, data);
            std::ostringstream csv;
            csv << "index,rejected,label,score\n";
            for (std::size_t i = 0; i < outcomes.size(); ++i)
                csv << i << ',' << (outcomes[i].rejected ? 1 : 0) << ','
                    << outcomes[i].label << ',' << outcomes[i].score << '\n';
            if (infer_out.empty()) std::cout << csv.str();
            else io::write_text_file(infer_out, csv.str());
        } else if (ev->parsed()) {
            DiffNet net = load_checkpoint(model_path);
            Batch clean = load_batch(clean_file);
            AdvBatch adv = load_adv_batch(net, adv_file);
            ordered_json j;
            std::vector<int> pred = net.predict(clean);
            j["clean_accuracy"] = accuracy(pred, *clean.y);
            j["adv_accuracy"] = accuracy(adv.predicted, *adv.perturbed.y);
            j["success_count"] = adv.success_count();
            if (!det_path.empty()) {
                UadModel uad = load_detector(det_path);
                AdvBatch pool = raw_mode ? adv : filter_successful(adv, net);
                if (pool.perturbed.count > 0) {
                    AuprcReport rep = auprc_by_class(
                        detection_scores(net, uad, clean, pool.perturbed),
                        net.num_classes());
                    j["auprc_macro"] = rep.macro;
                    j["auprc_per_class"] = rep.per_class;
                }
                RiskLedger with = risk_ledger_from_run(net, &uad, clean, adv);
                j["risk_with_uad"] = risk_with_uad(with, RiskWeights{});
                j["ledger_with_uad"] = {{"n_cln_inc", with.n_cln_inc},
                                        {"n_cln_rej", with.n_cln_rej},
                                        {"n_adv_inc", with.n_adv_inc},
                                        {"n", with.n}};
            }
            RiskLedger without = risk_ledger_from_run(net, nullptr, clean, adv);
            j["risk_without_uad"] = risk_without_uad(without, RiskWeights{});
            j["ledger_without_uad"] = {{"n_cln_inc", without.n_cln_inc},
                                       {"n_cln_rej", without.n_cln_rej},
                                       {"n_adv_inc", without.n_adv_inc},
                                       {"n", without.n}};
            io::write_text_file(eval_out + "/eval.json", j.dump(2) + "\n");
            std::cout << j.dump(2) << "\n";
        } else if (rn->parsed()) {
            ExperimentPlan plan = ExperimentPlan::from_file(plan_path);
            if (*seed_opt) plan.seed = seed;
            if (!run_out.empty()) plan.out_dir = run_out;
            RunRecord rec = run_experiment(plan);
            std::cout << "run complete, " << rec.artifacts.size() << " artifacts under "
                      << plan.out_dir << "\n";
        } else if (cv->parsed()) {
            emit_curves(records_dir, curves_out);
            std::cout << "curves written to " << curves_out << "\n";
        } else if (pj->parsed()) {
            DiffNet net = load_checkpoint(model_path);
            Batch clean = load_batch(data_file);
            std::optional<Batch> adv;
            if (!adv_file.empty()) adv = load_batch(adv_file);
            project_features(net, clean, adv ? &*adv : nullptr, proj_out);
            std::cout << "projection written to " << proj_out << "\n";
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}
