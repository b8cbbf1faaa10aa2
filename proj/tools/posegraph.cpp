// posegraph command-line tool: synth, train, learn-priors, detect, eval.
//
// Exit codes: 0 success, 1 usage error, 2 data/configuration error,
// 3 internal contract violation.

#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "posegraph/pipeline.hpp"

namespace pg = posegraph;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

struct Common {
    std::size_t workers = 1;
    std::uint64_t seed = 1;
};

void require_file(const std::string& path, const std::string& what)
{
    if (!std::filesystem::is_regular_file(path))
        throw pg::DataError(what + " '" + path + "' does not exist");
}

std::vector<pg::Joint> parse_joints(const std::vector<std::string>& names)
{
    std::vector<pg::Joint> out;
    for (const auto& n : names) {
        const auto j = pg::parse_joint(n);
        if (!j)
            throw pg::ConfigError("unknown joint '" + n + "' (expected face, lsho, lelb, lwri, rsho, relb or rwri)");
        out.push_back(*j);
    }
    return out;
}

pg::Split parse_split(const std::string& s)
{
    if (s == "train")
        return pg::Split::Train;
    if (s == "test")
        return pg::Split::Test;
    throw pg::ConfigError("split must be 'train' or 'test', got '" + s + "'");
}

template <std::size_t N>
void add_tuple(CLI::App* app, const std::string& name, std::array<std::size_t, N>& target, const std::string& help)
{
    std::string current;
    for (std::size_t i = 0; i < N; ++i)
        current += (i ? "," : "") + std::to_string(target[i]);
    app->add_option_function<std::vector<std::size_t>>(
           name,
           [&target, name](const std::vector<std::size_t>& v) {
               if (v.size() != N)
                   throw CLI::ValidationError(name, "expected " + std::to_string(N) + " comma-separated values");
               std::copy(v.begin(), v.end(), target.begin());
           },
           help)
        ->delimiter(',')
        ->default_str(current);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Convolutional part detectors with a spatial pose model"};
    app.require_subcommand(1);
    app.fallthrough(); // --workers and --seed may follow the subcommand
    app.set_config("--config", "", "TOML/INI file with option defaults; command-line flags take precedence");
    Common common;
    app.add_option("--workers", common.workers, "Worker threads; results do not depend on this")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    app.add_option("--seed", common.seed, "Seed for every random choice")->capture_default_str();

    // synth ------------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Render a synthetic stick-figure dataset");
    pg::SynthConfig synthCfg;
    std::string synthOut;
    synth->add_option("--out", synthOut, "Output directory")->required();
    synth->add_option("--n", synthCfg.n, "Number of images")->capture_default_str();
    synth->add_option("--noise", synthCfg.noise, "Uniform pixel noise amplitude")->capture_default_str();
    synth->add_option("--train-fraction", synthCfg.trainFraction, "Fraction of images in the train split")
        ->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    synth->add_option("--clutter", synthCfg.clutter, "Random background lines per image")->capture_default_str();

    // train ------------------------------------------------------------------
    auto* trainCmd = app.add_subcommand("train", "Train one part detector per joint");
    pg::TrainPipelineConfig trainCfg;
    std::string trainAnn, trainOut;
    std::vector<std::string> trainJoints{"face", "lsho", "lelb", "lwri"};
    trainCmd->add_option("--annotations", trainAnn, "Annotation file")->required();
    trainCmd->add_option("--out", trainOut, "Directory for <joint>.ckpt and <joint>.log")->required();
    trainCmd->add_option("--joints", trainJoints, "Joints to train")->delimiter(',')->capture_default_str();
    trainCmd->add_option("--epochs", trainCfg.train.epochs, "Training epochs")->capture_default_str();
    trainCmd->add_option("--batch", trainCfg.train.batchSize, "Mini-batch size")->capture_default_str();
    trainCmd->add_option("--lr", trainCfg.train.learningRate, "Learning rate")->capture_default_str();
    trainCmd->add_option("--momentum", trainCfg.train.momentumCoeff, "Nesterov momentum")->capture_default_str();
    trainCmd->add_option("--rms-decay", trainCfg.train.rmsDecay, "RMS decay")->capture_default_str();
    trainCmd->add_option("--rms-epsilon", trainCfg.train.rmsEpsilon, "RMS epsilon")->capture_default_str();
    trainCmd->add_option("--l2", trainCfg.train.l2Coeff, "L2 weight decay")->capture_default_str();
    trainCmd->add_option("--dropout", trainCfg.train.dropoutRate, "Dropout rate on fully-connected inputs")
        ->capture_default_str();
    trainCmd->add_option("--val-fraction", trainCfg.train.validationFraction, "Held-out validation fraction")
        ->capture_default_str();
    trainCmd->add_flag("--mirror", trainCfg.mirror, "Add horizontally mirrored copies of every training image");
    trainCmd->add_option("--patch-size", trainCfg.arch.patchSize, "Detector window side in pixels")
        ->capture_default_str();
    add_tuple(trainCmd, "--conv-maps", trainCfg.arch.convMaps, "Feature maps of the three conv stages");
    add_tuple(trainCmd, "--conv-kernels", trainCfg.arch.convKernels, "Kernel sides of the three conv stages");
    add_tuple(trainCmd, "--fc", trainCfg.arch.fcWidths, "Widths of the three fully-connected stages (last is 1)");
    trainCmd->add_option("--pos-radius", trainCfg.patches.positiveRadius, "Positive-patch jitter radius (px)")
        ->capture_default_str();
    trainCmd->add_option("--neg-per-pos", trainCfg.patches.negPerPos, "Negatives per positive")
        ->capture_default_str();
    trainCmd->add_option("--min-neg-distance", trainCfg.patches.minNegDistance,
                         "Minimum negative-center distance from the joint (px)")
        ->capture_default_str();
    trainCmd->add_option("--head-height", trainCfg.normalize.headHeight, "Canonical head-box height (px)")
        ->capture_default_str();

    // learn-priors -----------------------------------------------------------
    auto* priorsCmd = app.add_subcommand("learn-priors", "Learn pairwise and face priors from training annotations");
    std::string priorsAnn, priorsOut;
    pg::PriorOptions priorOpt;
    pg::NormalizeConfig priorNorm;
    bool priorsMirror = false;
    priorsCmd->add_option("--annotations", priorsAnn, "Annotation file")->required();
    priorsCmd->add_option("--out", priorsOut, "Prior bundle file")->required();
    priorsCmd->add_option("--radius", priorOpt.gridRadius, "Pairwise histogram radius (px)")->capture_default_str();
    priorsCmd->add_option("--sigma", priorOpt.sigma, "Pairwise smoothing sigma (px)")->capture_default_str();
    priorsCmd->add_option("--face-sigma", priorOpt.faceSigma, "Face prior smoothing sigma (px)")
        ->capture_default_str();
    priorsCmd->add_option("--head-height", priorNorm.headHeight, "Canonical head-box height (px)")
        ->capture_default_str();
    priorsCmd->add_flag("--mirror", priorsMirror, "Include mirrored annotations");

    // detect -----------------------------------------------------------------
    auto* detectCmd = app.add_subcommand("detect", "Detect face, shoulder, elbow and wrist on an annotation list");
    std::string detAnn, detModels, detPriors, detOut, detUnaryOut, detSplit = "test";
    pg::DetectOptions detOpt;
    pg::NmsConfig nms;
    bool noSpatial = false;
    detectCmd->add_option("--annotations", detAnn, "Annotation file listing the images")->required();
    detectCmd->add_option("--models", detModels, "Directory with face/lsho/lelb/lwri checkpoints")->required();
    detectCmd->add_option("--priors", detPriors, "Prior bundle file")->required();
    detectCmd->add_option("--out", detOut, "Detection file")->required();
    detectCmd->add_option("--unary-out", detUnaryOut, "Also write unary-only detections here");
    detectCmd->add_option("--split", detSplit, "Which split to run on (train or test)")->capture_default_str();
    detectCmd->add_flag("--no-spatial", noSpatial, "Write unary-only detections to --out");
    detectCmd->add_option("--scales", detOpt.scales.scales, "Pyramid scales, strictly decreasing")
        ->delimiter(',')
        ->capture_default_str();
    detectCmd->add_option("--lambda", detOpt.spatial.lambda, "Unary exponent in the filtered product")
        ->capture_default_str();
    detectCmd->add_option("--log-floor", detOpt.spatial.logFloor, "Probability floor before logs")
        ->capture_default_str();
    detectCmd->add_option("--top-n", nms.topN, "Detections per part (more than 1 enables NMS)")->capture_default_str();
    detectCmd->add_option("--nms-radius", nms.windowRadius, "NMS suppression radius (px)")->capture_default_str();

    // eval -------------------------------------------------------------------
    auto* evalCmd = app.add_subcommand("eval", "Accuracy-within-radius curves");
    std::string evalAnn, evalOut, evalSplit = "test";
    std::vector<std::string> evalDets, evalLabels;
    double maxRadius = 30;
    evalCmd->add_option("--annotations", evalAnn, "Ground-truth annotation file")->required();
    evalCmd->add_option("--detections", evalDets, "Detection file(s); several give side-by-side columns")
        ->required()
        ->take_all();
    evalCmd->add_option("--labels", evalLabels, "Column prefixes, one per detection file")->delimiter(',');
    evalCmd->add_option("--out", evalOut, "Curve CSV file")->required();
    evalCmd->add_option("--split", evalSplit, "Ground-truth split")->capture_default_str();
    evalCmd->add_option("--max-radius", maxRadius, "Largest radius (px); radii step by 1")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*synth) {
            synthCfg.seed = common.seed;
            const auto s = pg::run_synth(synthOut, synthCfg, common.workers);
            std::cout << "wrote " << s.train + s.test << " images (" << s.train << " train, " << s.test
                      << " test) and " << s.annotationPath << "\n";
        } else if (*trainCmd) {
            require_file(trainAnn, "annotation file");
            trainCfg.train.seed = common.seed;
            trainCfg.patches.seed = common.seed;
            trainCfg.workers = common.workers;
            const auto joints = parse_joints(trainJoints);
            const auto summary = pg::run_train(trainAnn, trainOut, joints, trainCfg,
                                               [](const std::string& line) { std::cout << line << "\n" << std::flush; });
            for (const auto& s : summary)
                std::cout << pg::joint_name(s.joint) << ": " << s.patches << " patches, " << s.skipped
                          << " examples skipped, best epoch " << s.bestEpoch << ", validation accuracy "
                          << s.bestValAccuracy << "\n";
        } else if (*priorsCmd) {
            require_file(priorsAnn, "annotation file");
            const auto examples = pg::load_annotations(priorsAnn, {.checkImageBounds = false});
            const auto bundle = pg::run_learn_priors(priorsAnn, examples, priorOpt, priorNorm, priorsMirror);
            pg::write_file_bytes(priorsOut, pg::save_prior_bundle(bundle));
            std::cout << "wrote " << priorsOut << "\n";
        } else if (*detectCmd) {
            require_file(detAnn, "annotation file");
            require_file(detPriors, "prior bundle");
            for (pg::Joint j : pg::kChainJoints)
                require_file(pg::checkpoint_path(detModels, j), "checkpoint");
            const auto examples = pg::load_annotations(detAnn);
            const auto models = pg::load_part_models(detModels);
            const auto priors = pg::load_prior_bundle(pg::read_file_bytes(detPriors));
            detOpt.workers = common.workers;
            nms.validate();
            const pg::Split split = parse_split(detSplit);
            if (nms.topN > 1) {
                const auto records =
                    pg::run_detect_multi(detAnn, examples, models, priors, detOpt, nms, !noSpatial, split);
                pg::save_detections(detOut, records);
                std::cout << "wrote " << records.size() << " detections to " << detOut << "\n";
            } else {
                const auto sets = pg::run_detect(detAnn, examples, models, priors, detOpt, split);
                pg::save_detections(detOut, noSpatial ? sets.unaryOnly : sets.spatial);
                if (!detUnaryOut.empty())
                    pg::save_detections(detUnaryOut, sets.unaryOnly);
                std::cout << "wrote " << sets.spatial.size() << " detections to " << detOut << "\n";
            }
        } else if (*evalCmd) {
            require_file(evalAnn, "annotation file");
            for (const auto& d : evalDets)
                require_file(d, "detection file");
            if (!evalLabels.empty() && evalLabels.size() != evalDets.size())
                throw pg::ConfigError("--labels needs one label per detection file");
            const auto truth = pg::split_examples(pg::load_annotations(evalAnn, {.checkImageBounds = false}),
                                                  parse_split(evalSplit));
            std::vector<std::vector<pg::DetectionRecord>> sets;
            for (const auto& d : evalDets)
                sets.push_back(pg::load_detections(d));
            std::vector<double> radii;
            for (double r = 0; r <= maxRadius; r += 1)
                radii.push_back(r);
            std::size_t missing = 0;
            const auto curves = pg::run_eval(sets, evalLabels, truth, radii, &missing);
            pg::emit_curves(curves, evalOut);
            for (const auto& c : curves)
                std::cout << c.name << " @5px: " << (radii.size() > 5 ? pg::accuracy_at(c, 5.0) : c.accuracy.back())
                          << "\n";
            if (missing)
                std::cout << missing << " ground-truth joints had no detection\n";
        }
    } catch (const pg::ContractViolation& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    } catch (const pg::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const pg::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kOk;
}
