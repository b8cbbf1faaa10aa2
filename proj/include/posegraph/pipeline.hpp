#pragma once

// File-level steps shared by the command-line tool and the end-to-end tests:
// synthesize -> train -> learn priors -> detect -> evaluate.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "posegraph/checkpoint.hpp"
#include "posegraph/dataset.hpp"
#include "posegraph/evaluation.hpp"
#include "posegraph/image_io.hpp"
#include "posegraph/inference.hpp"
#include "posegraph/spatial_model.hpp"
#include "posegraph/synthetic.hpp"
#include "posegraph/trainer.hpp"

namespace posegraph {

inline constexpr std::string_view kAnnotationFileName = "annotations.txt";

inline std::string checkpoint_path(const std::string& modelDir, Joint j)
{
    return (std::filesystem::path(modelDir) / (std::string(joint_name(j)) + ".ckpt")).string();
}

inline std::string training_log_path(const std::string& modelDir, Joint j)
{
    return (std::filesystem::path(modelDir) / (std::string(joint_name(j)) + ".log")).string();
}

inline void ensure_directory(const std::string& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw DataError("cannot create output directory '" + dir + "'");
}

// ---------------------------------------------------------------------------

struct SynthSummary {
    std::size_t train = 0;
    std::size_t test = 0;
    std::string annotationPath;
};

/// Writes img_NNNNN.ppm files and annotations.txt into `outDir`.
inline SynthSummary run_synth(const std::string& outDir, const SynthConfig& cfg, std::size_t workers = 1)
{
    ensure_directory(outDir);
    std::vector<PoseExample> examples(cfg.n);
    parallel_for(cfg.n, workers, [&](std::size_t i) {
        SyntheticSample s = generate_synthetic_one(cfg, i);
        write_ppm((std::filesystem::path(outDir) / s.example.imagePath).string(), s.image);
        examples[i] = std::move(s.example);
    });
    SynthSummary summary;
    summary.annotationPath = (std::filesystem::path(outDir) / kAnnotationFileName).string();
    save_annotations(summary.annotationPath, examples);
    for (const auto& ex : examples)
        ++(ex.split == Split::Train ? summary.train : summary.test);
    return summary;
}

// ---------------------------------------------------------------------------

struct TrainPipelineConfig {
    Architecture arch;
    TrainConfig train;
    PatchConfig patches;
    NormalizeConfig normalize;
    bool mirror = false;
    std::size_t workers = 1;
};

/// Training patches for `joint`, streamed one source image at a time so that
/// only the crops stay in memory.
inline PatchSet build_training_patches(const std::string& annotationPath, std::span<const PoseExample> examples,
                                       Joint joint, const TrainPipelineConfig& cfg)
{
    PatchConfig pc = cfg.patches;
    pc.patchSize = cfg.arch.patchSize;
    std::vector<PatchSet> perExample(examples.size());
    parallel_for(examples.size(), cfg.workers, [&](std::size_t i) {
        if (examples[i].split != Split::Train)
            return;
        const ImagePlane image = read_image(resolve_image_path(annotationPath, examples[i].imagePath));
        std::vector<NormalizedExample> frames{normalize_example(examples[i], image, cfg.normalize)};
        frames[0].sourceIndex = i;
        if (cfg.mirror)
            frames = with_mirrors(std::move(frames));
        perExample[i] = sample_patches(frames, joint, pc, 1);
    });
    PatchSet out;
    for (auto& set : perExample) {
        out.skippedExamples += set.skippedExamples;
        for (auto& s : set.samples)
            out.samples.push_back(std::move(s));
    }
    return out;
}

struct PartTrainSummary {
    Joint joint = Joint::Face;
    std::size_t patches = 0;
    std::size_t skipped = 0;
    std::size_t bestEpoch = 0;
    double bestValAccuracy = 0.0;
};

inline std::string epoch_log_line(Joint joint, const EpochLog& e)
{
    nlohmann::json j{{"joint", joint_name(joint)},
                     {"epoch", e.epoch},
                     {"train_loss", e.trainLoss},
                     {"val_loss", e.valLoss},
                     {"val_accuracy", e.valAccuracy}};
    return j.dump();
}

/// Trains one detector per joint and writes <joint>.ckpt and <joint>.log
/// (one JSON object per epoch) into `modelDir`.
inline std::vector<PartTrainSummary> run_train(const std::string& annotationPath, const std::string& modelDir,
                                               std::span<const Joint> joints, const TrainPipelineConfig& cfg,
                                               const std::function<void(const std::string&)>& progress = {})
{
    cfg.arch.validate();
    cfg.train.validate();
    const auto examples = load_annotations(annotationPath);
    ensure_directory(modelDir);
    std::vector<PartTrainSummary> out;
    for (Joint joint : joints) {
        const PatchSet patches = build_training_patches(annotationPath, examples, joint, cfg);
        if (patches.samples.empty())
            throw DataError(detail::concat("no training patches for ", joint_name(joint), " in '", annotationPath, "'"));
        std::ofstream log(training_log_path(modelDir, joint), std::ios::trunc);
        if (!log)
            throw DataError("cannot write training log in '" + modelDir + "'");
        const TrainResult result = train(patches.samples, cfg.train, cfg.arch, cfg.workers, [&](const EpochLog& e) {
            const std::string line = epoch_log_line(joint, e);
            log << line << '\n';
            if (progress)
                progress(line);
        });
        write_checkpoint(checkpoint_path(modelDir, joint), result.params);
        PartTrainSummary s{joint, patches.samples.size(), patches.skippedExamples, result.bestEpoch, 0.0};
        if (result.bestEpoch > 0)
            s.bestValAccuracy = result.log[result.bestEpoch - 1].valAccuracy;
        out.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------

/// Priors from the training split. Pairwise offsets are measured in the
/// canonical frame. Test images are not normalized, so the face prior is
/// learned from face positions in the source images, stretched onto the frame
/// grid; detection maps it back with the inverse stretch. With `mirror`, each
/// example also contributes its horizontal mirror.
inline PriorBundle run_learn_priors(const std::string& annotationPath, std::span<const PoseExample> examples,
                                    const PriorOptions& opt, const NormalizeConfig& normalize = {},
                                    bool mirror = false)
{
    std::vector<JointSet> frames, faces;
    for (const auto& ex : examples) {
        if (ex.split != Split::Train)
            continue;
        frames.push_back(normalize_joints(ex, normalize));
        const ImageSize size = probe_image_size(resolve_image_path(annotationPath, ex.imagePath));
        faces.push_back(stretch_to_frame(ex.joints, size.height, size.width, normalize.frameHeight,
                                         normalize.frameWidth));
        if (mirror) {
            frames.push_back(mirror_joints(frames.back(), normalize.frameWidth));
            faces.push_back(stretch_to_frame(mirror_joints(ex.joints, size.width), size.height, size.width,
                                             normalize.frameHeight, normalize.frameWidth));
        }
    }
    if (frames.empty())
        throw DataError("learn-priors: no training examples");
    PriorOptions o = opt;
    o.frameHeight = normalize.frameHeight;
    o.frameWidth = normalize.frameWidth;
    return learn_priors(frames, faces, o);
}

// ---------------------------------------------------------------------------

inline PartModels load_part_models(const std::string& modelDir)
{
    PartModels models;
    for (std::size_t p = 0; p < kPartCount; ++p) {
        const std::string path = checkpoint_path(modelDir, kChainJoints[p]);
        if (!std::filesystem::exists(path))
            throw DataError("missing checkpoint '" + path + "'");
        models[p] = p == 0 ? read_checkpoint(path) : read_checkpoint(path, models[0].arch);
    }
    return models;
}

struct DetectionSets {
    std::vector<DetectionRecord> spatial;
    std::vector<DetectionRecord> unaryOnly;
};

/// Single-person detection on every example of `split`. Both the filtered and
/// the unary-only answers come from the same forward passes.
inline DetectionSets run_detect(const std::string& annotationPath, std::span<const PoseExample> examples,
                                const PartModels& models, const PriorBundle& priors, DetectOptions opt,
                                Split split = Split::Test)
{
    opt.scales.validate();
    opt.spatial.validate();
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < examples.size(); ++i)
        if (examples[i].split == split)
            chosen.push_back(i);
    std::vector<PartDetections> results(chosen.size());
    const std::size_t workers = opt.workers;
    opt.workers = 1; // parallelism is over images
    parallel_for(chosen.size(), workers, [&](std::size_t k) {
        const PoseExample& ex = examples[chosen[k]];
        results[k] = detect(read_image(resolve_image_path(annotationPath, ex.imagePath)), models, priors, opt);
    });
    DetectionSets out;
    for (std::size_t k = 0; k < chosen.size(); ++k)
        for (std::size_t p = 0; p < kPartCount; ++p) {
            out.spatial.push_back({examples[chosen[k]].imagePath, results[k].spatial[p]});
            out.unaryOnly.push_back({examples[chosen[k]].imagePath, results[k].unaryOnly[p]});
        }
    return out;
}

/// Multi-person output: up to nms.topN detections per part and image.
inline std::vector<DetectionRecord> run_detect_multi(const std::string& annotationPath,
                                                     std::span<const PoseExample> examples, const PartModels& models,
                                                     const PriorBundle& priors, DetectOptions opt,
                                                     const NmsConfig& nms, bool spatial, Split split = Split::Test)
{
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < examples.size(); ++i)
        if (examples[i].split == split)
            chosen.push_back(i);
    std::vector<std::array<std::vector<Detection>, kPartCount>> results(chosen.size());
    const std::size_t workers = opt.workers;
    opt.workers = 1;
    parallel_for(chosen.size(), workers, [&](std::size_t k) {
        const PoseExample& ex = examples[chosen[k]];
        results[k] = detect_multi(read_image(resolve_image_path(annotationPath, ex.imagePath)), models, priors, nms, opt,
                                  spatial);
    });
    std::vector<DetectionRecord> out;
    for (std::size_t k = 0; k < chosen.size(); ++k)
        for (const auto& part : results[k])
            for (const auto& d : part)
                out.push_back({examples[chosen[k]].imagePath, d});
    return out;
}

// ---------------------------------------------------------------------------

/// Ground truth of `split` only.
inline std::vector<PoseExample> split_examples(std::span<const PoseExample> examples, Split split)
{
    std::vector<PoseExample> out;
    for (const auto& ex : examples)
        if (ex.split == split)
            out.push_back(ex);
    return out;
}

/// Curves for each detection set; with more than one set, column names are
/// prefixed "<label>:".
inline std::vector<AccuracyCurve> run_eval(std::span<const std::vector<DetectionRecord>> detectionSets,
                                           std::span<const std::string> labels,
                                           std::span<const PoseExample> groundTruth,
                                           std::span<const double> radii = {}, std::size_t* missing = nullptr)
{
    require(labels.empty() || labels.size() == detectionSets.size(), "run_eval: one label per detection set");
    std::vector<AccuracyCurve> curves;
    if (missing)
        *missing = 0;
    for (std::size_t s = 0; s < detectionSets.size(); ++s) {
        AccuracyReport report = accuracy_within_radius(detectionSets[s], groundTruth, kChainJoints, radii);
        if (missing)
            *missing += report.missing;
        for (auto& c : report.curves) {
            if (detectionSets.size() > 1)
                c.name = (labels.empty() ? detail::concat("run", s + 1) : labels[s]) + ":" + c.name;
            curves.push_back(std::move(c));
        }
    }
    return curves;
}

} // namespace posegraph
