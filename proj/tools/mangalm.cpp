// mangalm: command-line front end for the landmark pipeline and annotation service.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mangalm/io_util.hpp"
#include "mangalm/pipeline.hpp"
#include "mangalm/service.hpp"
#include "mangalm/synthetic.hpp"

// Included last: must follow the Eigen headers.
#include "httplib.h"

namespace {

using mangalm::PipelineError;

void print_error(const std::string& code, const std::string& message) {
    nlohmann::ordered_json line{{"error", code}, {"message", message}};
    std::cerr << line.dump() << std::endl;
}

std::optional<mangalm::BoxXYWH> parse_box(const std::string& text) {
    if (text.empty()) return std::nullopt;
    mangalm::BoxXYWH b;
    if (std::sscanf(text.c_str(), "%lf,%lf,%lf,%lf", &b.x, &b.y, &b.w, &b.h) != 4) {
        throw PipelineError("usage", "--bbox expects x,y,w,h");
    }
    return b;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Manga face landmark pipeline"};
    app.require_subcommand(1);
    std::string config_path = "config.json";
    std::optional<std::uint64_t> seed;
    bool verbose = false;
    app.add_option("--config", config_path, "Pipeline config file")->capture_default_str();
    app.add_option("--seed", seed, "Override the config seed");
    app.add_flag("-v,--verbose", verbose, "Per-record and per-epoch logging");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic manga-face dataset");
    std::string synth_dir;
    mangalm::SyntheticOptions synth_opts;
    bool overwrite_config = false;
    synth->add_option("--out", synth_dir, "Output directory")->required();
    synth->add_option("--count", synth_opts.count, "Number of faces")->capture_default_str();
    synth->add_option("--double-label-fraction", synth_opts.double_label_fraction)->capture_default_str();
    synth->add_option("--label-noise", synth_opts.label_noise_px, "Label noise sigma in pixels")->capture_default_str();
    synth->add_option("--omit-optional-fraction", synth_opts.omit_optional_fraction)->capture_default_str();
    synth->add_option("--excluded-fraction", synth_opts.excluded_fraction)->capture_default_str();
    synth->add_flag("--write-config", overwrite_config, "Overwrite an existing config.json in the output directory");

    auto* ingest = app.add_subcommand("ingest", "Validate the manifest against its images");
    auto* filter = app.add_subcommand("filter", "Apply the selection rules");
    auto* merge = app.add_subcommand("merge", "Compare double labels and merge the clean ones");
    auto* complete = app.add_subcommand("complete", "Synthesize missing nose, pupils and eyebrows");
    auto* split = app.add_subcommand("split", "Seeded train/validation/test split");
    auto* augment = app.add_subcommand("augment", "Plan augmented copies of the training subset");

    std::optional<std::string> experiment;
    auto* train = app.add_subcommand("train", "Train the experiment grid");
    train->add_option("--experiment", experiment, "Train only this experiment");
    auto* eval = app.add_subcommand("eval", "Evaluate trained experiments on the test subset");
    eval->add_option("--experiment", experiment, "Evaluate only this experiment");
    auto* run = app.add_subcommand("run", "ingest, filter, merge, complete, split, augment, train and eval");

    auto* predict = app.add_subcommand("predict", "Predict landmarks for one image");
    std::string image_path, bbox_text, out_path;
    predict->add_option("--image", image_path, "Grayscale PGM image")->required();
    predict->add_option("--bbox", bbox_text, "Face box x,y,w,h (default: whole image)");
    predict->add_option("--experiment", experiment, "Experiment whose checkpoint to use");
    predict->add_option("--out", out_path, "Predictions file (default: <work>/predictions.jsonl)");

    auto* serve = app.add_subcommand("serve", "Run the annotation HTTP service");
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string serve_manifest;
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--port", port)->capture_default_str();
    serve->add_option("--manifest", serve_manifest, "Manifest to annotate (default: paths.manifest)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error("usage", e.what());
        return 2;
    }

    try {
        if (synth->parsed()) {
            if (seed) synth_opts.seed = *seed;
            const mangalm::fs::path dir = synth_dir;
            const auto records = mangalm::generate_synthetic_dataset(dir, synth_opts);
            const auto cfg_file = dir / "config.json";
            if (overwrite_config || !mangalm::fs::exists(cfg_file)) {
                mangalm::PipelineConfig cfg;
                cfg.seed = synth_opts.seed;
                cfg.paths.manifest = "manifest.jsonl";
                cfg.paths.image_root = ".";
                cfg.paths.work_dir = "work";
                mangalm::write_file_atomic(cfg_file, mangalm::pipeline_config_to_json(cfg).dump(2) + "\n");
            }
            std::cout << "synth: wrote " << records.size() << " faces to " << dir.string() << "\n";
            return 0;
        }

        mangalm::PipelineConfig config = mangalm::load_config(config_path);
        if (seed) config.seed = *seed;

        if (serve->parsed()) {
            const mangalm::fs::path manifest = serve_manifest.empty() ? config.paths.manifest : mangalm::fs::path(serve_manifest);
            if (!mangalm::fs::exists(manifest)) {
                throw PipelineError("missing-input", "manifest not found: " + manifest.string());
            }
            mangalm::Pipeline pipeline(config);
            std::optional<mangalm::CascadeModel> model;
            if (mangalm::fs::exists(pipeline.default_checkpoint())) {
                model = mangalm::read_checkpoint(pipeline.default_checkpoint());
            }
            mangalm::AnnotationService service(manifest, config.paths.image_root, std::move(model),
                                               config.label_tolerance);
            httplib::Server server;
            mangalm::mount_routes(server, service);
            std::cout << "serving on http://" << host << ":" << port << std::endl;
            if (!server.listen(host, port)) throw PipelineError("service", "cannot listen on " + host + ":" + std::to_string(port));
            return 0;
        }

        mangalm::Pipeline pipeline(config, &std::cout, verbose);
        if (ingest->parsed()) pipeline.ingest();
        else if (filter->parsed()) pipeline.filter();
        else if (merge->parsed()) pipeline.merge();
        else if (complete->parsed()) pipeline.complete();
        else if (split->parsed()) pipeline.split();
        else if (augment->parsed()) pipeline.augment();
        else if (train->parsed()) pipeline.train(experiment);
        else if (eval->parsed()) pipeline.eval(experiment);
        else if (predict->parsed()) {
            pipeline.predict(image_path, parse_box(bbox_text), experiment,
                             out_path.empty() ? std::nullopt : std::optional<mangalm::fs::path>(out_path));
        } else if (run->parsed()) {
            pipeline.ingest();
            pipeline.filter();
            pipeline.merge();
            pipeline.complete();
            pipeline.split();
            pipeline.augment();
            pipeline.train();
            pipeline.eval();
        }
        return 0;
    } catch (const PipelineError& e) {
        print_error(e.code(), e.what());
    } catch (const std::exception& e) {
        print_error("internal", e.what());
    }
    return 1;
}
