#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcinr/dataset.hpp"
#include "mcinr/evaluate.hpp"
#include "mcinr/model_store.hpp"
#include "mcinr/trainer.hpp"

namespace {

using namespace mcinr;

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot create " + path);
    os << content;
    if (!os) throw std::runtime_error("write failed: " + path);
}

DataFormat format_from_path(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".csv") return DataFormat::Csv;
    return DataFormat::Native;
}

struct EncodeOptions {
    std::string data_path;
    std::string out_path = "model.mcinrm";
    PipelineConfig pipeline;
    bool no_meta = false;
    bool no_recluster = false;
    bool shared_head = false;
};

// Registers every tunable so it can come from flags or a key=value config
// file, and so the echoed config reproduces the run.
void add_encode_options(CLI::App* cmd, EncodeOptions& opt) {
    cmd->add_option("--data", opt.data_path, "input dataset (.mcds or .csv)")->required();
    cmd->add_option("--out", opt.out_path, "output model file");
    cmd->set_config("--config", "", "key = value config file");

    NetworkShape& s = opt.pipeline.shape;
    cmd->add_option("--width", s.width, "network width")->capture_default_str();
    cmd->add_option("--gfe", s.gfe_blocks, "trunk residual blocks")->capture_default_str();
    cmd->add_option("--lfe", s.lfe_blocks, "per-branch residual blocks")->capture_default_str();
    cmd->add_option("--pe-frequencies", s.pe.num_frequencies, "positional encoding octaves")
        ->capture_default_str();
    cmd->add_flag("--pe-no-raw", [&s](std::int64_t) { s.pe.include_raw = false; },
                  "drop raw coordinates from the encoding");
    cmd->add_option("--omega-first", s.omega_first, "first-layer sine frequency scale")
        ->capture_default_str();

    TrainConfig& t = opt.pipeline.train;
    cmd->add_option("--k", t.k, "top-level cluster count")->capture_default_str();
    cmd->add_option("--tau", t.residual_threshold, "re-clustering residual threshold")
        ->capture_default_str();
    cmd->add_option("--lr", t.initial_lr, "initial learning rate")->capture_default_str();
    cmd->add_option("--lr-decay", t.lr_decay_factor, "learning rate decay factor")
        ->capture_default_str();
    cmd->add_option("--lr-interval", t.lr_decay_interval, "epochs between decays")
        ->capture_default_str();
    cmd->add_option("--patience", t.convergence_patience, "epochs without improvement to stop")
        ->capture_default_str();
    cmd->add_option("--sample-fraction", t.sample_fraction, "record fraction sampled per epoch")
        ->capture_default_str();
    cmd->add_option("--max-split-depth", t.max_split_depth, "re-clustering depth cap")
        ->capture_default_str();
    cmd->add_option("--batch-size", t.batch_size, "minibatch records")->capture_default_str();
    cmd->add_option("--max-epochs", t.max_epochs, "hard epoch cap")->capture_default_str();
    cmd->add_option("--seed", t.seed, "global seed")->capture_default_str();
    cmd->add_option("--workers", t.worker_count, "worker threads (0 = auto)")
        ->capture_default_str();
    cmd->add_flag("--verbose", t.verbose, "per-cluster progress on stderr");

    MetaConfig& m = opt.pipeline.meta;
    cmd->add_option("--meta-iterations", m.meta_iterations, "meta-learning outer iterations")
        ->capture_default_str();
    cmd->add_option("--meta-sample", m.sample_count, "points per meta task (0 = auto)")
        ->capture_default_str();
    cmd->add_option("--meta-inner-steps", m.inner_steps, "inner adaptation steps")
        ->capture_default_str();
    cmd->add_option("--meta-inner-lr", m.inner_lr, "inner loop learning rate")
        ->capture_default_str();
    cmd->add_option("--meta-outer-lr", m.outer_lr, "outer loop learning rate")
        ->capture_default_str();

    cmd->add_flag("--no-meta", opt.no_meta, "skip meta-learning (random init)");
    cmd->add_flag("--no-recluster", opt.no_recluster, "disable residual-driven splitting");
    cmd->add_flag("--shared-head", opt.shared_head, "one shared branch for all variables");
}

int cmd_encode(CLI::App* cmd, EncodeOptions& opt) {
    Dataset ds = read_dataset(opt.data_path, format_from_path(opt.data_path));
    opt.pipeline.use_meta = !opt.no_meta;
    opt.pipeline.shape.shared_head = opt.shared_head;
    if (opt.no_recluster) opt.pipeline.train.max_split_depth = 0;

    PipelineResult result = run_pipeline(ds, opt.pipeline);
    const std::uint64_t bytes = save_model(result.model, opt.out_path);
    const double cr = compression_ratio(ds, opt.out_path);

    std::ostringstream report;
    report << run_report(result, ds);
    report << "model_bytes=" << bytes << "\n";
    {
        std::ostringstream cr_fixed;
        cr_fixed.setf(std::ios::fixed);
        cr_fixed.precision(2);
        cr_fixed << cr;
        report << "compression_ratio=" << cr_fixed.str() << "\n";
        if (cr < 1.0) {
            std::cerr << "warning: model file larger than raw data (CR = " << cr_fixed.str()
                      << ")\n";
        }
    }
    write_text_file(opt.out_path + ".report.txt", report.str());
    write_text_file(opt.out_path + ".config", cmd->config_to_str(true, true));

    std::cout << "encoded " << opt.data_path << " -> " << opt.out_path << " (" << bytes
              << " bytes, " << result.results.size() << " leaves, CR "
              << std::fixed << std::setprecision(2) << cr << ")\n";
    return 0;
}

int cmd_decode(const std::string& model_path, const std::string& queries_path,
               const std::string& out_path) {
    EncodedModel model = load_model(model_path);
    std::ifstream is(queries_path);
    if (!is) throw std::runtime_error("cannot open queries file: " + queries_path);
    std::vector<Query4> queries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        if (line_no == 1 && line.rfind("x,", 0) == 0) continue;  // optional header
        std::istringstream ls(line);
        Query4 q;
        char sep;
        if (!(ls >> q[0] >> sep >> q[1] >> sep >> q[2] >> sep >> q[3])) {
            throw std::runtime_error("queries: malformed row at line " + std::to_string(line_no) +
                                     ": '" + line + "'");
        }
        queries.push_back(q);
    }
    DecodeResult dec = decode(model, queries, 2);

    std::ofstream os(out_path);
    if (!os) throw std::runtime_error("cannot create " + out_path);
    os << "x,y,z,t";
    for (const auto& name : model.variable_names) os << ',' << name;
    os << ",oob\n";
    os.precision(9);
    for (std::size_t i = 0; i < queries.size(); ++i) {
        os << queries[i][0] << ',' << queries[i][1] << ',' << queries[i][2] << ',' << queries[i][3];
        for (std::uint32_t j = 0; j < model.variable_count; ++j) os << ',' << dec.values.at(i, j);
        os << ',' << int(dec.out_of_bounds[i]) << "\n";
    }
    if (!os) throw std::runtime_error("write failed: " + out_path);
    std::cout << "decoded " << queries.size() << " queries";
    if (dec.out_of_bounds_count) std::cout << " (" << dec.out_of_bounds_count << " out of bounds)";
    std::cout << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path,
             const std::string& report_path, const std::string& error_map_path,
             const std::string& error_map_format) {
    EncodedModel model = load_model(model_path);
    Dataset ds = read_dataset(data_path, format_from_path(data_path));
    MetricReport rep = evaluate_model(model, ds, 2);
    std::cout << rep.table();
    if (!report_path.empty()) write_text_file(report_path, rep.key_values());
    if (!error_map_path.empty()) {
        const ErrorMapFormat fmt =
            error_map_format == "mcds-delta" ? ErrorMapFormat::McdsDelta : ErrorMapFormat::Csv;
        export_error_map(ds, model, error_map_path, fmt, 2);
        std::cout << "error map written to " << error_map_path << "\n";
    }
    return 0;
}

int cmd_inspect(const std::string& model_path) {
    EncodedModel model = load_model(model_path);
    const std::uint64_t bytes = file_size_bytes(model_path);
    std::cout << "model: " << model_path << "\n";
    std::cout << "  format version: " << model.version << "\n";
    std::cout << "  dataset: N=" << model.point_count << " T=" << model.timestep_count
              << " M=" << model.variable_count << "\n";
    std::cout << "  variables:";
    for (const auto& name : model.variable_names) std::cout << ' ' << name;
    std::cout << "\n";
    std::cout << "  top-level clusters (K): " << model.partition.tree_count() << "\n";
    const auto leaves = model.partition.leaves();
    std::cout << "  terminal leaves: " << leaves.size() << "\n";
    int max_depth = 0;
    for (const LeafKey& leaf : leaves) max_depth = std::max(max_depth, model.partition.depth_of(leaf));
    std::cout << "  max split depth: " << max_depth << "\n";
    const NetworkShape& s = model.shape;
    std::cout << "  network: width " << s.width << ", " << s.gfe_blocks << " trunk + "
              << s.lfe_blocks << " branch blocks, " << (s.shared_head ? "shared head" : "branched")
              << ", PE L=" << s.pe.num_frequencies << (s.pe.include_raw ? "+raw" : "") << "\n";
    std::cout << "  parameters per network: " << param_count(s) << "\n";
    std::cout << "  parameters total: " << param_count(s) * model.networks.size() << "\n";
    std::cout << "  networks: " << model.networks.size() << "\n";
    std::cout << "  file size: " << bytes << " bytes\n";
    for (const auto& st : model.stats) {
        std::cout << "  leaf " << st.leaf.str() << ": " << st.point_count << " points, residual "
                  << st.aggregate_mse << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Clustered sine-network encoder for multivariate unstructured point data"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic MCDS dataset");
    SynthSpec spec;
    std::vector<std::string> field_names{"trig"};
    std::string synth_out = "data.mcds";
    synth->add_option("--points", spec.point_count, "spatial points")->capture_default_str();
    synth->add_option("--timesteps", spec.timesteps, "timesteps")->capture_default_str();
    synth->add_option("--fields", field_names,
                      "field kinds (trig, bump, discontinuity, contrast)")
        ->delimiter(',')
        ->capture_default_str();
    synth->add_option("--noise", spec.noise, "additive gaussian noise sigma")->capture_default_str();
    synth->add_option("--seed", spec.seed, "seed")->capture_default_str();
    synth->add_option("--out", synth_out, "output file")->capture_default_str();

    // encode
    auto* encode = app.add_subcommand("encode", "train an encoded model from a dataset");
    EncodeOptions enc;
    add_encode_options(encode, enc);

    // decode
    auto* dec = app.add_subcommand("decode", "evaluate a model at query coordinates");
    std::string dec_model, dec_queries, dec_out = "predictions.csv";
    dec->add_option("--model", dec_model, "model file")->required();
    dec->add_option("--queries", dec_queries, "csv of x,y,z,t rows")->required();
    dec->add_option("--out", dec_out, "output csv")->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "metrics of a model against its dataset");
    std::string eval_model, eval_data, eval_report, eval_map, eval_map_format = "csv";
    eval->add_option("--model", eval_model, "model file")->required();
    eval->add_option("--data", eval_data, "dataset file")->required();
    eval->add_option("--report", eval_report, "write key=value metric report here");
    eval->add_option("--error-map", eval_map, "write per-record absolute errors here");
    eval->add_option("--error-map-format", eval_map_format, "csv or mcds-delta")
        ->capture_default_str();

    // inspect
    auto* inspect = app.add_subcommand("inspect", "summarize a model file");
    std::string inspect_model;
    inspect->add_option("--model", inspect_model, "model file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            spec.fields.clear();
            for (const auto& name : field_names) spec.fields.push_back(parse_field_kind(name));
            Dataset ds = synthesize(spec);
            write_dataset(ds, synth_out);
            std::cout << "wrote " << synth_out << ": N=" << ds.point_count
                      << " T=" << ds.timestep_count << " M=" << ds.variable_count << " ("
                      << raw_size_bytes(ds) << " raw value bytes)\n";
            return 0;
        }
        if (encode->parsed()) return cmd_encode(encode, enc);
        if (dec->parsed()) return cmd_decode(dec_model, dec_queries, dec_out);
        if (eval->parsed()) {
            return cmd_eval(eval_model, eval_data, eval_report, eval_map, eval_map_format);
        }
        if (inspect->parsed()) return cmd_inspect(inspect_model);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
