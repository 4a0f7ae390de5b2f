#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "bseg/checkpoint.hpp"
#include "bseg/evaluate.hpp"
#include "bseg/infer.hpp"

namespace fs = std::filesystem;
using namespace bseg;

namespace {

struct ModelFlags {
    std::string variant = "full";
    int64_t classes = 1;
    int64_t stem_channels = 64;
    std::vector<int64_t> stage_channels{64, 128, 256, 512};
    std::vector<int64_t> blocks{2, 2, 2, 2};
    int64_t vit_dmodel = 64;
    int64_t heads = 4;
    int64_t vit_channels = 64;
    int64_t bem_channels = 32;
    int64_t decoder_channels = 32;
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
    cmd->add_option("--variant", mf.variant,
                    "model variant: cnn | cnn+vit | cnn+vit+cbm | cnn+vit+bem | full")
        ->capture_default_str();
    cmd->add_option("--classes", mf.classes, "label values incl. background; 1 = binary")
        ->capture_default_str();
    cmd->add_option("--stem-channels", mf.stem_channels)->capture_default_str();
    cmd->add_option("--stage-channels", mf.stage_channels, "4 encoder stage widths")->expected(4);
    cmd->add_option("--blocks", mf.blocks, "residual blocks per stage")->expected(4);
    cmd->add_option("--vit-dmodel", mf.vit_dmodel)->capture_default_str();
    cmd->add_option("--heads", mf.heads)->capture_default_str();
    cmd->add_option("--vit-channels", mf.vit_channels)->capture_default_str();
    cmd->add_option("--bem-channels", mf.bem_channels)->capture_default_str();
    cmd->add_option("--decoder-channels", mf.decoder_channels)->capture_default_str();
}

ModelConfig build_model_config(const CLI::App* cmd, const ModelFlags& mf, bool desk, int64_t size,
                               int boundary_width) {
    ModelConfig cfg = desk ? ModelConfig::tiny(size) : ModelConfig();
    cfg.variant = variant_from_string(mf.variant);
    cfg.classes = mf.classes;
    cfg.image_size = size;
    cfg.boundary_width = boundary_width;
    auto touched = [&](const std::string& flag) { return cmd->count(flag) > 0; };
    if (!desk || touched("--stem-channels")) cfg.backbone.stem_channels = mf.stem_channels;
    if (!desk || touched("--stage-channels"))
        std::copy(mf.stage_channels.begin(), mf.stage_channels.end(),
                  cfg.backbone.stage_channels.begin());
    if (!desk || touched("--blocks"))
        std::copy(mf.blocks.begin(), mf.blocks.end(), cfg.backbone.blocks_per_stage.begin());
    if (!desk || touched("--vit-dmodel")) cfg.vit_dmodel = mf.vit_dmodel;
    if (!desk || touched("--heads")) cfg.heads = mf.heads;
    if (!desk || touched("--vit-channels")) cfg.vit_channels = mf.vit_channels;
    if (!desk || touched("--bem-channels")) cfg.bem_channels = mf.bem_channels;
    if (!desk || touched("--decoder-channels")) cfg.decoder_channels = mf.decoder_channels;
    return cfg;
}

int run_train(const CLI::App* cmd, const ModelFlags& mf, const TrainConfig& tc_in,
              const std::string& data_dir, const std::string& resume, bool desk) {
    TrainConfig tc = tc_in;
    if (desk) {
        if (cmd->count("--batch") == 0) tc.batch = 4;
        if (cmd->count("--size") == 0) tc.image_size = 64;
    }
    tc.validate();

    std::unique_ptr<Model> model;
    std::unique_ptr<Adam> opt;
    int64_t start_epoch = 0;
    if (!resume.empty()) {
        Checkpoint ck = load_checkpoint(resume);
        if (ck.model_cfg.image_size != tc.image_size)
            throw ConfigError("resume: checkpoint was trained at size " +
                              std::to_string(ck.model_cfg.image_size) + ", got --size " +
                              std::to_string(tc.image_size));
        model = std::move(ck.model);
        opt = std::make_unique<Adam>(ck.make_optimizer());
        opt->set_lr(tc.lr);
        start_epoch = ck.epoch;
        std::cout << "resumed from " << resume << " at epoch " << start_epoch << "\n";
    } else {
        ModelConfig mc = build_model_config(cmd, mf, desk, tc.image_size, tc.boundary_width);
        model = build_model(mc, tc.seed);
        std::vector<Var> params;
        for (const auto& [name, v] : model->store().params()) params.push_back(v);
        opt = std::make_unique<Adam>(std::move(params), tc.lr);
    }
    std::cout << "variant " << to_string(model->config().variant) << ", "
              << model->param_count() << " trainable parameters\n";

    auto data = load_dataset(data_dir, tc.image_size, tc.boundary_width);
    std::cout << "loaded " << data.size() << " samples from " << data_dir << "\n";
    TrainResult res = train_model(*model, *opt, data, tc, start_epoch, &std::cout);
    std::cout << "done: " << res.steps << " steps, " << res.epochs_completed << " epochs";
    if (!res.last_checkpoint.empty()) std::cout << ", checkpoint " << res.last_checkpoint;
    std::cout << "\n";
    return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_dir, const std::string& out_dir) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    auto data = load_dataset(data_dir, ck.model_cfg.image_size, ck.model_cfg.boundary_width);
    EvalReport report = evaluate_model(*ck.model, data);
    fs::create_directories(out_dir);
    write_metrics_json((fs::path(out_dir) / "metrics.json").string(), report);
    write_per_image_csv((fs::path(out_dir) / "per_image.csv").string(), report);
    std::cout << summary_line(report) << "\n";
    std::cout << "wrote " << (fs::path(out_dir) / "metrics.json").string() << " and "
              << (fs::path(out_dir) / "per_image.csv").string() << "\n";
    return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& input, std::string out_path,
              bool boundary, bool overlay) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (out_path.empty())
        out_path = (fs::path(input).parent_path() / (fs::path(input).stem().string() + "_mask.png"))
                       .string();
    InferOptions opts;
    opts.boundary = boundary;
    opts.overlay = overlay;
    run_inference(*ck.model, input, out_path, opts);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int run_synth(const std::string& out_dir, int64_t n, int64_t size, uint64_t seed) {
    fs::create_directories(fs::path(out_dir) / "images");
    fs::create_directories(fs::path(out_dir) / "masks");
    auto samples = synth_dataset(n, size, seed);
    for (const Sample& s : samples) {
        write_image_png((fs::path(out_dir) / "images" / (s.id + ".png")).string(), s.image);
        write_mask_png((fs::path(out_dir) / "masks" / (s.id + ".png")).string(), s.mask);
    }
    std::cout << "wrote " << samples.size() << " image/mask pairs under " << out_dir << "\n";
    return 0;
}

int run_make_boundaries(const std::string& data_dir, int width) {
    DatasetManifest manifest = scan_dataset(data_dir);
    const fs::path out = fs::path(data_dir) / "boundaries";
    fs::create_directories(out);
    for (const ManifestEntry& e : manifest.pairs) {
        Sample s = load_pair(e, /*size=*/0, width);
        Mask vis = s.boundary;
        for (auto& v : vis.v) v = v ? 255 : 0;
        write_mask_png((out / (e.id + ".png")).string(), vis);
    }
    std::cout << "wrote " << manifest.pairs.size() << " boundary maps under " << out.string()
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"boundary-guided dual-stream segmentation"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "train a model on an images/masks dataset");
    ModelFlags mf;
    TrainConfig tc;
    std::string data_dir, resume;
    bool desk = false;
    add_model_flags(train, mf);
    train->add_option("--data", data_dir, "dataset root (images/ + masks/)")->required();
    train->add_option("--out", tc.checkpoint_dir, "checkpoint directory")->required();
    train->add_option("--lr", tc.lr)->capture_default_str();
    train->add_option("--batch", tc.batch)->capture_default_str();
    train->add_option("--epochs", tc.epochs)->capture_default_str();
    train->add_option("--size", tc.image_size, "square input size (multiple of 32)")
        ->capture_default_str();
    train->add_option("--alpha", tc.alpha, "boundary loss weight")->capture_default_str();
    train->add_option("--seed", tc.seed)->capture_default_str();
    train->add_option("--boundary-width", tc.boundary_width)->capture_default_str();
    train->add_option("--max-steps", tc.max_steps, "stop after N optimizer steps (<0: run all epochs)");
    train->add_option("--resume", resume, "checkpoint to resume from (epoch boundary)");
    train->add_flag("--desk", desk, "desk-scale preset: tiny widths, batch 4, size 64");
    train->set_config("--config", "", "flat key=value config file; flags override it");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint: Dice/IoU/HD/PQ");
    std::string eval_ckpt, eval_data, eval_out = ".";
    eval->add_option("--checkpoint", eval_ckpt)->required();
    eval->add_option("--data", eval_data)->required();
    eval->add_option("--out", eval_out, "directory for metrics.json and per_image.csv")
        ->capture_default_str();
    eval->set_config("--config", "", "flat key=value config file; flags override it");

    // infer
    auto* infer = app.add_subcommand("infer", "segment one image");
    std::string in_image, infer_ckpt, infer_out;
    bool want_boundary = false, want_overlay = false;
    infer->add_option("image", in_image, "input image (PNG/JPEG; grayscale accepted)")->required();
    infer->add_option("--checkpoint", infer_ckpt)->required();
    infer->add_option("--out", infer_out, "output mask path (default: <input>_mask.png)");
    infer->add_flag("--boundary", want_boundary, "also write the boundary probability map");
    infer->add_flag("--overlay", want_overlay, "also write a contour overlay");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic shape dataset");
    std::string synth_out;
    int64_t synth_n = 16, synth_size = 64;
    uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out)->required();
    synth->add_option("--n", synth_n)->capture_default_str();
    synth->add_option("--size", synth_size)->capture_default_str();
    synth->add_option("--seed", synth_seed)->capture_default_str();

    // make-boundaries
    auto* mb = app.add_subcommand("make-boundaries", "derive boundary maps from dataset masks");
    std::string mb_data;
    int mb_width = 1;
    mb->add_option("--data", mb_data)->required();
    mb->add_option("--width", mb_width, "boundary width in pixels")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return run_train(train, mf, tc, data_dir, resume, desk);
        if (eval->parsed()) return run_eval(eval_ckpt, eval_data, eval_out);
        if (infer->parsed())
            return run_infer(infer_ckpt, in_image, infer_out, want_boundary, want_overlay);
        if (synth->parsed()) return run_synth(synth_out, synth_n, synth_size, synth_seed);
        if (mb->parsed()) return run_make_boundaries(mb_data, mb_width);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
