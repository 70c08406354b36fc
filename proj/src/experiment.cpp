#include "advshield/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "advshield/io.hpp"

namespace advshield {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::map<std::string, std::string> parse_key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto strip = [](std::string s) {
            auto b = s.find_first_not_of(" \t\r");
            auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        line = strip(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("plan: expected key=value, got: " + line);
        kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
    }
    return kv;
}

namespace {

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string cell;
    while (std::getline(in, cell, ','))
        if (!cell.empty()) out.push_back(cell);
    return out;
}

std::vector<LayerSpec> parse_hidden(const std::string& s) {
    std::vector<LayerSpec> out;
    for (const std::string& item : split_csv(s)) {
        auto parts = [&] {
            std::vector<std::string> p;
            std::istringstream in(item);
            std::string c;
            while (std::getline(in, c, ':')) p.push_back(c);
            return p;
        }();
        if (parts.size() == 2 && parts[0] == "dense")
            out.push_back(LayerSpec::dense(std::stoi(parts[1])));
        else if (parts.size() == 3 && parts[0] == "conv")
            out.push_back(LayerSpec::conv(std::stoi(parts[1]), std::stoi(parts[2])));
        else
            throw ConfigError("plan: bad layer spec '" + item + "' (use dense:W or conv:C:K)");
    }
    return out;
}

std::string fmt_eps(float eps) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", static_cast<double>(eps));
    return buf;
}

std::string fmt_fixed(double v, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

} // namespace

ExperimentPlan ExperimentPlan::from_key_values(const std::map<std::string, std::string>& kv) {
    ExperimentPlan p;
    auto get = [&](const char* k) -> const std::string* {
        auto it = kv.find(k);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto v = get("dataset_dir")) p.dataset_dir = *v;
    if (auto v = get("out_dir")) p.out_dir = *v;
    if (auto v = get("seed")) p.seed = std::stoull(*v);
    if (auto v = get("regimes")) {
        p.regimes.clear();
        for (const auto& r : split_csv(*v)) p.regimes.push_back(regime_from_string(r));
    }
    if (auto v = get("methods")) {
        p.methods.clear();
        for (const auto& m : split_csv(*v)) p.methods.push_back(attack_method_from_string(m));
    }
    if (auto v = get("eps_grid")) {
        p.eps_grid.clear();
        for (const auto& e : split_csv(*v)) p.eps_grid.push_back(std::stof(e));
    }
    if (auto v = get("attack_steps")) p.attack_steps = std::stoi(*v);
    if (auto v = get("attack_step_size")) p.attack_step_size = std::stof(*v);
    if (auto v = get("cw_constant")) p.cw_constant = std::stof(*v);
    if (auto v = get("cw_steps")) p.cw_steps = std::stoi(*v);
    if (auto v = get("cw_lr")) p.cw_lr = std::stof(*v);
    if (auto v = get("hidden")) p.hidden = parse_hidden(*v);
    if (auto v = get("epochs")) p.train.epochs = std::stoi(*v);
    if (auto v = get("batch_size")) p.train.batch_size = std::stoi(*v);
    if (auto v = get("lr")) p.train.lr = std::stof(*v);
    if (auto v = get("lambda")) p.train.lambda = std::stof(*v);
    if (auto v = get("train_eps_lo")) p.train.train_eps_lo = std::stof(*v);
    if (auto v = get("train_eps_hi")) p.train.train_eps_hi = std::stof(*v);
    if (auto v = get("warmup_epochs")) p.train.warmup_epochs = std::stoi(*v);
    if (auto v = get("uad_components")) p.uad_components = std::stoi(*v);
    if (auto v = get("uad_diag_reg")) p.uad_diag_reg = std::stod(*v);
    if (auto v = get("percentile")) p.percentile = std::stod(*v);
    if (auto v = get("risk_cln_prd")) p.weights.r_cln_prd = std::stod(*v);
    if (auto v = get("risk_cln_uad")) p.weights.r_cln_uad = std::stod(*v);
    if (auto v = get("risk_adv_prd")) p.weights.r_adv_prd = std::stod(*v);
    p.validate();
    return p;
}

ExperimentPlan ExperimentPlan::from_file(const std::string& path) {
    return from_key_values(parse_key_values(io::read_text_file(path)));
}

void ExperimentPlan::validate() const {
    if (dataset_dir.empty()) throw ConfigError("plan: dataset_dir is required");
    if (out_dir.empty()) throw ConfigError("plan: out_dir is required");
    if (regimes.empty()) throw ConfigError("plan: at least one regime is required");
    if (methods.empty()) throw ConfigError("plan: at least one attack method is required");
    if (eps_grid.empty()) throw ConfigError("plan: eps_grid must be non-empty");
    for (std::size_t i = 0; i < eps_grid.size(); ++i) {
        if (eps_grid[i] < 0.0f) throw ConfigError("plan: eps grid values must be >= 0");
        if (i > 0 && eps_grid[i] <= eps_grid[i - 1])
            throw ConfigError("plan: eps grid must be strictly ascending");
    }
    if (attack_steps < 1) throw ConfigError("plan: attack_steps must be >= 1");
    train.validate();
}

std::string ExperimentPlan::canonical() const {
    std::ostringstream s;
    s << "dataset=" << dataset_dir << ";seed=" << seed << ";regimes=";
    for (Regime r : regimes) s << to_string(r) << ',';
    s << ";methods=";
    for (AttackMethod m : methods) s << to_string(m) << ',';
    s << ";eps=";
    for (float e : eps_grid) s << fmt_eps(e) << ',';
    s << ";steps=" << attack_steps << ";step_size=" << fmt_eps(attack_step_size)
      << ";cw=" << fmt_eps(cw_constant) << '/' << cw_steps << '/' << fmt_eps(cw_lr)
      << ";hidden=";
    for (const LayerSpec& l : hidden) {
        if (l.kind == LayerKind::Dense) s << "d" << l.width << ',';
        else s << "c" << l.channels << 'x' << l.kernel << ',';
    }
    s << ";epochs=" << train.epochs << ";bs=" << train.batch_size
      << ";lr=" << fmt_eps(train.lr) << ";lambda=" << fmt_eps(train.lambda)
      << ";teps=" << fmt_eps(train.train_eps_lo) << '-' << fmt_eps(train.train_eps_hi)
      << ";warmup=" << train.warmup_epochs
      << ";J=" << uad_components << ";reg=" << uad_diag_reg << ";pct=" << percentile
      << ";w=" << weights.r_cln_prd << '/' << weights.r_cln_uad << '/' << weights.r_adv_prd;
    return s.str();
}

std::uint64_t ExperimentPlan::config_hash() const {
    std::string c = canonical();
    return io::fnv1a(c.data(), c.size());
}

std::string RunRecord::to_json() const {
    ordered_json j;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["artifacts"] = artifacts;
    ordered_json t = ordered_json::object();
    for (const auto& [k, v] : timings_sec) t[k] = v;
    j["timings_sec"] = t;
    if (!failed_stage.empty()) j["failed_stage"] = failed_stage;
    return j.dump(2) + "\n";
}

namespace {

struct CellResult {
    std::string regime;
    std::string method;
    float eps = 0.0f;
    double adv_accuracy = 0.0;
    int success_count = 0;
    std::vector<double> auprc_per_class;
    double auprc_macro = std::numeric_limits<double>::quiet_NaN();
    RiskLedger with_uad;
    RiskLedger without_uad;
    double risk_with = 0.0;
    double risk_without = 0.0;
};

ordered_json ledger_json(const RiskLedger& l) {
    return {{"n_cln_inc", l.n_cln_inc}, {"n_cln_rej", l.n_cln_rej},
            {"n_adv_inc", l.n_adv_inc}, {"n", l.n}};
}

} // namespace

RunRecord run_experiment(const ExperimentPlan& plan) {
    plan.validate();
    RunRecord rec;
    rec.config_hash = plan.config_hash();
    rec.seed = plan.seed;
    std::string stage = "setup";
    auto clock = [] { return std::chrono::steady_clock::now(); };

    try {
        fs::create_directories(plan.out_dir);
        DatasetManifest manifest = DatasetManifest::from_json(
            io::read_text_file(plan.dataset_dir + "/manifest.json"));
        const int num_classes = static_cast<int>(manifest.class_names.size());
        Batch train_set = load_batch(plan.dataset_dir + "/train.adtn");
        Batch unlabeled = load_batch(plan.dataset_dir + "/unlabeled.adtn");
        Batch test_set = load_batch(plan.dataset_dir + "/test.adtn");

        NetConfig net_cfg;
        net_cfg.input = manifest.dims;
        net_cfg.hidden = plan.hidden;
        net_cfg.num_classes = num_classes;

        std::map<std::string, DiffNet> models;
        std::map<std::string, UadModel> detectors;

        for (Regime regime : plan.regimes) {
            const std::string rname = to_string(regime);
            stage = "train:" + rname;
            auto t0 = clock();
            std::string model_path = plan.out_dir + "/models/" + rname + ".adsh";
            if (!fs::exists(model_path)) {
                net_cfg.seed = plan.seed;
                TrainConfig tc = plan.train;
                tc.regime = regime;
                tc.seed = plan.seed;
                std::optional<Batch> unl;
                if (regime == Regime::Ssat) unl = unlabeled;
                TrainResult tr = train(DiffNet::build(net_cfg), train_set, unl, tc);
                save_checkpoint(tr.net, model_path);
                io::write_text_file(plan.out_dir + "/models/" + rname + "_loss_trace.csv",
                                    trace_to_csv(tr.trace));
            }
            models.emplace(rname, load_checkpoint(model_path));
            rec.artifacts.push_back(model_path);

            stage = "fit-uad:" + rname;
            std::string det_path = plan.out_dir + "/detectors/" + rname + ".adud";
            if (!fs::exists(det_path)) {
                EmOptions em;
                em.components = plan.uad_components;
                em.diag_reg = plan.uad_diag_reg;
                em.seed = plan.seed;
                UadModel uad = fit_uad(models.at(rname), train_set, em);
                uad = calibrate_thresholds(uad, models.at(rname), unlabeled, plan.percentile);
                save_detector(uad, det_path);
            }
            detectors.emplace(rname, load_detector(det_path));
            rec.artifacts.push_back(det_path);
            rec.timings_sec.emplace_back("train+uad:" + rname,
                std::chrono::duration<double>(clock() - t0).count());
        }

        std::vector<CellResult> cells;
        for (Regime regime : plan.regimes) {
            const std::string rname = to_string(regime);
            const DiffNet& net = models.at(rname);
            const UadModel& uad = detectors.at(rname);
            for (AttackMethod method : plan.methods) {
                for (std::size_t ei = 0; ei < plan.eps_grid.size(); ++ei) {
                    float eps = plan.eps_grid[ei];
                    const std::string tag = rname + "_" + to_string(method) + "_e" + fmt_eps(eps);
                    stage = "attack:" + tag;
                    auto t0 = clock();

                    AttackSpec spec;
                    spec.method = method;
                    spec.steps = method == AttackMethod::Fgsm ? 1
                               : method == AttackMethod::Pgd ? plan.attack_steps : plan.cw_steps;
                    spec.cw_lr = plan.cw_lr;
                    spec.seed = plan.seed ^ io::fnv1a(tag.data(), tag.size());
                    if (method == AttackMethod::Cw) {
                        spec.cw_constant = eps;   // the grid doubles as the C&W constant axis
                    } else {
                        spec.eps = eps;
                        spec.step_size = method == AttackMethod::Fgsm ? eps : plan.attack_step_size;
                    }

                    std::string adv_path = plan.out_dir + "/adv/" + tag + ".adtn";
                    std::string adv_csv = plan.out_dir + "/adv/" + tag + ".csv";
                    if (!fs::exists(adv_path)) {
                        AdvBatch adv = craft(net, test_set, spec);
                        save_adv_batch(adv, adv_path, adv_csv);
                    }
                    AdvBatch adv = load_adv_batch(net, adv_path);
                    rec.artifacts.push_back(adv_path);

                    stage = "eval:" + tag;
                    CellResult cell;
                    cell.regime = rname;
                    cell.method = to_string(method);
                    cell.eps = eps;
                    cell.adv_accuracy = accuracy(adv.predicted, *adv.perturbed.y);
                    AdvBatch successful = filter_successful(adv, net);
                    cell.success_count = successful.perturbed.count;

                    cell.without_uad = risk_ledger_from_run(net, nullptr, test_set, adv);
                    cell.with_uad = risk_ledger_from_run(net, &uad, test_set, adv);
                    cell.risk_without = risk_without_uad(cell.without_uad, plan.weights);
                    cell.risk_with = risk_with_uad(cell.with_uad, plan.weights);

                    if (cell.success_count > 0) {
                        auto scores = detection_scores(net, uad, test_set, successful.perturbed);
                        try {
                            AuprcReport rep = auprc_by_class(scores, num_classes);
                            cell.auprc_per_class = rep.per_class;
                            cell.auprc_macro = rep.macro;
                        } catch (const InputError&) {
                            // degenerate pooling (e.g. everything one class); leave NaN
                        }
                    }

                    ordered_json cj;
                    cj["regime"] = cell.regime;
                    cj["method"] = cell.method;
                    cj["eps"] = fmt_eps(eps);
                    cj["adv_accuracy"] = fmt_fixed(cell.adv_accuracy);
                    cj["success_count"] = cell.success_count;
                    cj["risk_without_uad"] = fmt_fixed(cell.risk_without);
                    cj["risk_with_uad"] = fmt_fixed(cell.risk_with);
                    cj["ledger_without_uad"] = ledger_json(cell.without_uad);
                    cj["ledger_with_uad"] = ledger_json(cell.with_uad);
                    if (std::isfinite(cell.auprc_macro)) cj["auprc_macro"] = fmt_fixed(cell.auprc_macro);
                    io::write_text_file(plan.out_dir + "/records/" + tag + ".json", cj.dump(2) + "\n");
                    rec.artifacts.push_back(plan.out_dir + "/records/" + tag + ".json");
                    rec.timings_sec.emplace_back("cell:" + tag,
                        std::chrono::duration<double>(clock() - t0).count());
                    cells.push_back(std::move(cell));
                }
            }
        }

        stage = "reports";
        const std::string hash_line = "# config_hash=" + std::to_string(rec.config_hash) +
                                      " seed=" + std::to_string(plan.seed) + "\n";
        for (AttackMethod method : plan.methods) {
            for (float eps : plan.eps_grid) {
                const std::string suffix = to_string(method) + "_e" + fmt_eps(eps);
                // AUPRC table, one row per regime (Table 1 layout)
                std::ostringstream ap;
                ap << hash_line << "regime";
                for (const std::string& cn : manifest.class_names) ap << ',' << cn;
                ap << ",average,cases\n";
                std::ostringstream rk;
                rk << hash_line << "metric";
                for (Regime r : plan.regimes) rk << ',' << to_string(r);
                rk << '\n';
                std::vector<std::string> rows{"risk_without_uad", "risk_with_uad", "prediction_accuracy"};
                std::vector<std::vector<std::string>> risk_cells(3);

                for (Regime regime : plan.regimes) {
                    const std::string rname = to_string(regime);
                    auto it = std::find_if(cells.begin(), cells.end(), [&](const CellResult& c) {
                        return c.regime == rname && c.method == to_string(method) && c.eps == eps;
                    });
                    ap << rname;
                    for (int c = 0; c < num_classes; ++c) {
                        ap << ',';
                        if (!it->auprc_per_class.empty() && std::isfinite(it->auprc_per_class[c]))
                            ap << fmt_fixed(it->auprc_per_class[c], 4);
                    }
                    ap << ',';
                    if (std::isfinite(it->auprc_macro)) ap << fmt_fixed(it->auprc_macro, 4);
                    ap << ',' << it->success_count << '\n';
                    risk_cells[0].push_back(fmt_fixed(it->risk_without, 4));
                    risk_cells[1].push_back(fmt_fixed(it->risk_with, 4));
                    risk_cells[2].push_back(fmt_fixed(it->adv_accuracy, 4));
                }
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    rk << rows[r];
                    for (const std::string& v : risk_cells[r]) rk << ',' << v;
                    rk << '\n';
                }
                io::write_text_file(plan.out_dir + "/reports/auprc_" + suffix + ".csv", ap.str());
                io::write_text_file(plan.out_dir + "/reports/risk_" + suffix + ".csv", rk.str());
                rec.artifacts.push_back(plan.out_dir + "/reports/auprc_" + suffix + ".csv");
                rec.artifacts.push_back(plan.out_dir + "/reports/risk_" + suffix + ".csv");
            }
        }

        ordered_json summary;
        summary["config_hash"] = rec.config_hash;
        summary["seed"] = plan.seed;
        summary["plan"] = plan.canonical();
        ordered_json jcells = ordered_json::array();
        for (const CellResult& c : cells) {
            ordered_json jc;
            jc["regime"] = c.regime;
            jc["method"] = c.method;
            jc["eps"] = fmt_eps(c.eps);
            jc["adv_accuracy"] = fmt_fixed(c.adv_accuracy);
            jc["success_count"] = c.success_count;
            jc["risk_without_uad"] = fmt_fixed(c.risk_without);
            jc["risk_with_uad"] = fmt_fixed(c.risk_with);
            jc["ledger_without_uad"] = ledger_json(c.without_uad);
            jc["ledger_with_uad"] = ledger_json(c.with_uad);
            jcells.push_back(jc);
        }
        summary["cells"] = jcells;
        io::write_text_file(plan.out_dir + "/reports/summary.json", summary.dump(2) + "\n");
        rec.artifacts.push_back(plan.out_dir + "/reports/summary.json");

        if (plan.eps_grid.size() >= 2)
            emit_curves(plan.out_dir + "/records", plan.out_dir + "/curves");

        io::write_text_file(plan.out_dir + "/run_record.json", rec.to_json());
        return rec;
    } catch (const std::exception& e) {
        rec.failed_stage = stage;
        try {
            io::write_text_file(plan.out_dir + "/run_record.json", rec.to_json());
        } catch (...) {
        }
        throw;
    }
}

void emit_curves(const std::string& records_dir, const std::string& out_dir) {
    // (regime, method) -> sorted (eps, accuracy)
    std::map<std::pair<std::string, std::string>, std::vector<std::pair<double, std::string>>> curves;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(records_dir))
        if (entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files) {
        nlohmann::json j = nlohmann::json::parse(io::read_text_file(p.string()));
        curves[{j["regime"], j["method"]}].emplace_back(
            std::stod(j["eps"].get<std::string>()), j["adv_accuracy"].get<std::string>());
    }
    for (auto& [key, pts] : curves) {
        if (pts.size() < 2)
            throw ConfigError("curves: need at least 2 eps points for " + key.first + "/" + key.second);
        std::sort(pts.begin(), pts.end());
        std::ostringstream csv;
        csv << "eps,accuracy\n";
        for (const auto& [eps, acc] : pts) {
            char b[32];
            std::snprintf(b, sizeof(b), "%g", eps);
            csv << b << ',' << acc << '\n';
        }
        io::write_text_file(out_dir + "/curve_" + key.first + "_" + key.second + ".csv", csv.str());
    }
}

void project_features(const DiffNet& net, const Batch& clean, const Batch* adv,
                      const std::string& out_csv) {
    const int total = clean.count + (adv ? adv->count : 0);
    if (total < 2) throw InputError("project: need at least 2 samples");

    FeatureMatrix fc = extract_features(net, clean);
    std::vector<int> pc = net.predict(clean);
    std::optional<FeatureMatrix> fa;
    std::vector<int> pa;
    if (adv && adv->count > 0) {
        fa = extract_features(net, *adv);
        pa = net.predict(*adv);
    }

    const int n = fc.dim;
    Eigen::MatrixXd Z(total, n);
    for (int i = 0; i < fc.rows; ++i)
        Z.row(i) = Eigen::Map<const Eigen::VectorXd>(fc.row(i), n);
    if (fa)
        for (int i = 0; i < fa->rows; ++i)
            Z.row(fc.rows + i) = Eigen::Map<const Eigen::VectorXd>(fa->row(i), n);

    Eigen::RowVectorXd mean = Z.colwise().mean();
    Eigen::MatrixXd C = Z.rowwise() - mean;
    Eigen::MatrixXd cov = (C.transpose() * C) / static_cast<double>(total);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    Eigen::MatrixXd basis(n, 2);
    basis.col(0) = eig.eigenvectors().col(n - 1);
    if (n >= 2)
        basis.col(1) = eig.eigenvectors().col(n - 2);
    else
        basis.col(1).setZero();
    // deterministic sign: the largest-magnitude coefficient is positive
    for (int k = 0; k < 2; ++k) {
        int arg = 0;
        for (int i = 1; i < n; ++i)
            if (std::abs(basis(i, k)) > std::abs(basis(arg, k))) arg = i;
        if (basis(arg, k) < 0) basis.col(k) *= -1.0;
    }
    Eigen::MatrixXd proj = C * basis;

    std::ostringstream csv;
    csv << "x,y,true_class,predicted_class,is_adversarial\n";
    auto emit = [&](int row, int true_cls, int pred_cls, int is_adv) {
        csv << fmt_fixed(proj(row, 0)) << ',' << fmt_fixed(proj(row, 1)) << ','
            << true_cls << ',' << pred_cls << ',' << is_adv << '\n';
    };
    for (int i = 0; i < clean.count; ++i)
        emit(i, clean.y ? (*clean.y)[i] : -1, pc[i], 0);
    if (fa)
        for (int i = 0; i < adv->count; ++i)
            emit(clean.count + i, adv->y ? (*adv->y)[i] : -1, pa[i], 1);
    io::write_text_file(out_csv, csv.str());
}

} // namespace advshield
