// Command-line front end: train / eval / ef / scan-dump / synth / report.
// Exit codes: 0 success, 2 configuration error, 3 data error.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "hssnet/ef.hpp"
#include "hssnet/pgm.hpp"
#include "hssnet/scan.hpp"
#include "hssnet/trainer.hpp"

using namespace hssnet;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string num(double v, const char* fmt = "%.6g") {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

void run_train(const std::string& config_path, const std::string& data_override,
               const std::string& resume, i64 max_epochs) {
    TrainConfig cfg = parse_train_config(config_path);
    if (!data_override.empty()) cfg.data_dir = data_override;

    const TrainResult res = train_from_dir(cfg, resume, max_epochs, [&](const EpochLog& e) {
        std::cout << "epoch " << (e.epoch + 1) << "/" << cfg.epochs << "  lr " << num(e.lr)
                  << "  loss " << num(e.train_loss) << "  val_dice " << num(e.val_dice)
                  << "  val_ef_corr " << num(e.val_ef_corr) << "\n"
                  << std::flush;
    });
    std::cout << "done: " << res.steps << " steps";
    if (res.opt.skipped > 0) std::cout << " (" << res.opt.skipped << " skipped on non-finite grads)";
    if (!cfg.ckpt_path.empty()) std::cout << ", checkpoint " << cfg.ckpt_path;
    if (!cfg.log_path.empty()) std::cout << ", log " << cfg.log_path;
    std::cout << "\n";
}

void run_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out_csv,
              int n_disks) {
    HSSNet model = HSSNet::load(ckpt);
    const std::vector<ClipRecord> clips = load_clips(data_dir);
    std::vector<const ClipRecord*> ptrs;
    ptrs.reserve(clips.size());
    for (const auto& c : clips) ptrs.push_back(&c);

    const EvalSummary s = evaluate_clips(ptrs, model_predictor(model), n_disks);
    write_metrics_csv(out_csv, s.rows);

    std::cout << "clips " << s.rows.size() << "  mean_dice " << num(s.mean_dice) << "  mean_hd95 "
              << num(s.mean_hd95) << " (missing " << s.hd95_missing << ")\n";
    std::cout << "ef_corr " << num(s.ef.corr_defined ? s.ef.corr : std::nan("")) << "  ef_bias "
              << num(s.ef.bias) << "  ef_std " << num(s.ef.std_dev) << " (missing " << s.ef_missing
              << ")\n";
    std::cout << "metrics written to " << out_csv << "\n";
}

void print_ef_line(const std::string& ed, const std::string& es, const std::string& ed2,
                   const std::string& es2, int n_disks) {
    ordered_json j;
    j["ed"] = ed;
    j["es"] = es;
    EFReport rep;
    if (!ed2.empty()) {
        j["ed2"] = ed2;
        j["es2"] = es2;
        rep = ef_from_masks_biplane(read_pgm(ed), read_pgm(ed2), read_pgm(es), read_pgm(es2),
                                    n_disks);
    } else {
        rep = ef_from_masks(read_pgm(ed), read_pgm(es), n_disks);
    }
    j["edv"] = rep.edv;
    j["esv"] = rep.esv;
    j["ef"] = rep.ef;
    std::cout << j.dump() << "\n";
}

void run_ef(const std::string& ed, const std::string& es, const std::string& ed2,
            const std::string& es2, const std::string& manifest, int n_disks) {
    if (!manifest.empty()) {
        if (!ed.empty() || !es.empty()) {
            throw ConfigError("ef: --manifest excludes --ed/--es");
        }
        std::ifstream is(manifest);
        if (!is) throw DataError("ef: cannot open manifest " + manifest);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            std::istringstream ls(line);
            std::vector<std::string> cols;
            std::string tok;
            while (ls >> tok) cols.push_back(tok);
            if (cols.empty() || cols[0][0] == '#') continue;
            if (cols.size() == 2) {
                print_ef_line(cols[0], cols[1], "", "", n_disks);
            } else if (cols.size() == 4) {
                print_ef_line(cols[0], cols[2], cols[1], cols[3], n_disks);
            } else {
                throw DataError("ef: manifest line " + std::to_string(lineno) +
                                ": expected 2 (ed es) or 4 (ed ed2 es es2) paths");
            }
        }
        return;
    }
    if (ed.empty() || es.empty()) throw ConfigError("ef: --ed and --es are required");
    if (ed2.empty() != es2.empty()) throw ConfigError("ef: --ed2 and --es2 must come together");
    print_ef_line(ed, es, ed2, es2, n_disks);
}

void run_scan_dump(int t, int rows, int cols, const std::string& mode_str,
                   const std::string& dir_str) {
    if (t < 1 || rows < 1 || cols < 1) throw ConfigError("scan-dump: t/rows/cols must be >= 1");
    scan::Mode mode;
    try {
        mode = scan::mode_from_name(mode_str);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("scan-dump: ") + e.what());
    }
    scan::Direction dir;
    if (dir_str == "forward") {
        dir = scan::Direction::Forward;
    } else if (dir_str == "backward") {
        dir = scan::Direction::Backward;
    } else {
        throw ConfigError("scan-dump: direction must be forward or backward");
    }
    const scan::PatchGrid grid{t, rows, cols};
    const std::vector<i64> order = scan::make_order(mode, dir, grid);
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i) std::cout << ",";
        std::cout << order[i];
    }
    std::cout << "\n";
}

void run_synth(const std::string& spec_path, int n, const std::string& out_dir,
               std::uint64_t seed) {
    if (n < 1) throw ConfigError("synth: --n must be >= 1");
    const CorpusSpec corpus = parse_corpus_spec(spec_path);
    for (int i = 0; i < n; ++i) {
        ClipRecord clip;
        try {
            clip = make_clip(corpus, seed, i);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("synth: corpus ranges produce invalid geometry: " +
                              std::string(e.what()));
        }
        write_clip(out_dir + "/" + clip.clip_id, clip);
    }
    std::cout << "wrote " << n << " clips to " << out_dir << "\n";
}

void run_report(const std::string& csv_path, const std::string& out_svg) {
    std::ifstream is(csv_path);
    if (!is) throw DataError("report: cannot open " + csv_path);
    std::string header;
    if (!std::getline(is, header) ||
        header != "clip_id,dice_ed,dice_es,hd95_ed,hd95_es,ef_true,ef_pred") {
        throw DataError("report: " + csv_path + " is not a metrics CSV");
    }
    std::vector<double> truth, pred;
    std::string line;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) cols.push_back(tok);
        if (cols.size() != 7) {
            throw DataError("report: " + csv_path + ":" + std::to_string(lineno) +
                            ": expected 7 columns");
        }
        try {
            truth.push_back(std::stod(cols[5]));
            pred.push_back(std::stod(cols[6]));
        } catch (const std::exception&) {
            throw DataError("report: " + csv_path + ":" + std::to_string(lineno) +
                            ": bad EF value");
        }
    }
    if (truth.empty()) throw DataError("report: " + csv_path + " has no rows");
    write_ef_scatter_svg(out_svg, truth, pred);
    std::cout << "scatter written to " << out_svg << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical spatio-temporal segmentation and ejection-fraction toolkit"};
    app.require_subcommand(1);

    // train
    std::string cfg_path, data_override, resume;
    i64 max_epochs = -1;
    auto* sub_train = app.add_subcommand("train", "train a model from a config file");
    sub_train->add_option("--config", cfg_path, "key = value config file")->required();
    sub_train->add_option("--data", data_override, "override the config's data_dir");
    sub_train->add_option("--resume", resume, "resume from a training checkpoint");
    sub_train->add_option("--max-epochs", max_epochs, "run at most this many epochs, then stop");

    // eval
    std::string ckpt, data_dir, out_csv = "metrics.csv";
    int eval_disks = 20;
    auto* sub_eval = app.add_subcommand("eval", "evaluate a checkpoint on a clip directory");
    sub_eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
    sub_eval->add_option("--data", data_dir, "clip directory")->required();
    sub_eval->add_option("--out", out_csv, "metrics CSV output path");
    sub_eval->add_option("--disks", eval_disks, "disk count for volume estimation");

    // ef
    std::string ed, es, ed2, es2, manifest;
    int ef_disks = 20;
    auto* sub_ef = app.add_subcommand("ef", "ejection fraction from mask images (JSON lines)");
    sub_ef->add_option("--ed", ed, "end-diastolic mask (PGM)");
    sub_ef->add_option("--es", es, "end-systolic mask (PGM)");
    sub_ef->add_option("--ed2", ed2, "second-view ED mask for biplane");
    sub_ef->add_option("--es2", es2, "second-view ES mask for biplane");
    sub_ef->add_option("--manifest", manifest, "batch file: 'ed es' or 'ed ed2 es es2' per line");
    sub_ef->add_option("--disks", ef_disks, "disk count for volume estimation");

    // scan-dump
    int t = 1, rows = 1, cols = 1;
    std::string mode_str, dir_str = "forward";
    auto* sub_scan = app.add_subcommand("scan-dump", "print a traversal permutation as CSV");
    sub_scan->add_option("--t", t, "frame count")->required();
    sub_scan->add_option("--rows", rows, "patch rows")->required();
    sub_scan->add_option("--cols", cols, "patch cols")->required();
    sub_scan->add_option("--mode", mode_str, "temporal|spatial|diagonal|antidiagonal")->required();
    sub_scan->add_option("--direction", dir_str, "forward|backward");

    // synth
    std::string synth_spec, synth_out;
    int synth_n = 0;
    std::uint64_t synth_seed = 0;
    auto* sub_synth = app.add_subcommand("synth", "render a synthetic clip corpus");
    sub_synth->add_option("--spec", synth_spec, "corpus spec file")->required();
    sub_synth->add_option("--n", synth_n, "number of clips")->required();
    sub_synth->add_option("--out", synth_out, "output directory")->required();
    sub_synth->add_option("--seed", synth_seed, "base seed (clip i uses seed+i)");

    // report
    std::string report_csv, report_out = "scatter.svg";
    auto* sub_report = app.add_subcommand("report", "SVG scatter of predicted vs reference EF");
    sub_report->add_option("--csv", report_csv, "metrics CSV from eval")->required();
    sub_report->add_option("--out", report_out, "SVG output path");

    try {
        app.parse(argc, argv);
        if (sub_train->parsed()) run_train(cfg_path, data_override, resume, max_epochs);
        if (sub_eval->parsed()) run_eval(ckpt, data_dir, out_csv, eval_disks);
        if (sub_ef->parsed()) run_ef(ed, es, ed2, es2, manifest, ef_disks);
        if (sub_scan->parsed()) run_scan_dump(t, rows, cols, mode_str, dir_str);
        if (sub_synth->parsed()) run_synth(synth_spec, synth_n, synth_out, synth_seed);
        if (sub_report->parsed()) run_report(report_csv, report_out);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
