#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sscl/core.hpp"

namespace sscl {

// ---- manifests ----------------------------------------------------------

struct ManifestRecord {
  std::string path;  // relative to the manifest root; doubles as source_id
  int class_index = 0;
  std::string split;  // "train" or "test"
};

// Parameters of the stateless Gaussian-cluster generator. A manifest carrying
// these is self-describing: every sample is recomputed from its path.
struct SyntheticSpec {
  int classes = 8;
  InputShape shape{32, 1, 1};
  int train_per_class = 500;
  int test_per_class = 100;
  double separation = 4.0;  // distance between any two class means
  double noise = 1.0;       // per-coordinate standard deviation
  std::uint64_t seed = 0;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<std::string> class_names;  // optional; empty means unnamed
  std::vector<ManifestRecord> records;
  std::optional<SyntheticSpec> synthetic;
  std::optional<int> resize_to;  // square target applied at load time

  int class_count() const;
  std::string class_name(int c) const;
};

// Text format: "path<TAB>class_index<TAB>split" per line. Lines starting with
// '#' carry metadata ("# classes = a,b,c", "# synthetic = k=v ...",
// "# resize = 32") or are ignored.
Manifest load_manifest(const std::filesystem::path& file);
void save_manifest(const Manifest& m, const std::filesystem::path& file);
Manifest synthetic_manifest(const SyntheticSpec& spec);

// ---- sample loading -----------------------------------------------------

class SampleLoader {
 public:
  virtual ~SampleLoader() = default;
  virtual InputShape shape() const = 0;
  // Channel-major sample in [0, 1] for images, raw values otherwise.
  virtual Vector load(const std::string& path) const = 0;
};

// Picks the synthetic generator or the image-directory reader (PNM, PNG) and
// applies the manifest's resize target.
std::unique_ptr<SampleLoader> make_loader(const Manifest& m);

Vector synthetic_sample(const SyntheticSpec& spec, int class_index, int index);

// Bilinear resampling with half-pixel centers; exact identity at equal size.
Vector resize_bilinear(const Vector& image, InputShape from, int height, int width);

// Returns a manifest whose samples load at target x target. Misuse error for
// non-image manifests.
Manifest resize_inputs(const Manifest& m, int target);

// ---- splits -------------------------------------------------------------

// `label` is what training sees: the position of the class within id_classes,
// or UNLABELED for the unlabeled pool. `audit_class` is the manifest class and
// is read only by evaluation and reporting.
struct LabeledExample {
  std::string source_id;
  ClassLabel label;
  int audit_class = 0;
  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

struct DatasetSplit {
  std::vector<LabeledExample> labeled;
  std::vector<LabeledExample> unlabeled;
  std::vector<LabeledExample> validation;
  std::vector<LabeledExample> test;
  std::vector<int> id_classes;
  std::vector<int> ood_classes;
  double mismatch_ratio = 0.0;

  // Where the inputs live; the unlabeled pool may come from a second manifest.
  std::filesystem::path manifest;
  std::filesystem::path unlabeled_manifest;

  int num_classes() const { return static_cast<int>(id_classes.size()); }
};

struct MismatchSplitOptions {
  std::vector<int> id_classes;
  std::vector<int> ood_classes;
  double mismatch_ratio = 0.5;
  int labeled_per_class = 400;
  int val_per_class = 400;
  int unlabeled_slots = 4;
  std::uint64_t seed = 0;
};

// Every class (ID and OOD) first gives up labeled_per_class + val_per_class
// training samples; ID classes keep them as D_L and validation. The unlabeled
// pool then takes (1 - r) * U ID classes from the end of id_classes and r * U
// OOD classes from the front of ood_classes, each with all of its remaining
// training samples.
DatasetSplit build_mismatch_split(const Manifest& manifest, const MismatchSplitOptions& options);

struct CrossDatasetCounts {
  int labeled_per_class = 100;
  int val_per_class = 100;
};

// Labeled, validation and test pools come from the labeled manifest (all of its
// classes are ID); every training record of the unlabeled manifest becomes D_U.
DatasetSplit build_cross_dataset_split(const Manifest& labeled_manifest, const Manifest& unlabeled_manifest,
                                       double declared_mismatch_ratio, const CrossDatasetCounts& counts,
                                       std::uint64_t seed);

// Classes of the unlabeled pool in pool order (audit view).
std::vector<int> unlabeled_classes(const DatasetSplit& split);

void save_split(const DatasetSplit& split, const std::filesystem::path& file);
DatasetSplit load_split(const std::filesystem::path& file);

// Inputs of one pool stacked row-wise, with the training-visible labels.
struct MaterializedPool {
  Matrix inputs;
  std::vector<ClassLabel> labels;
  std::vector<int> audit_classes;
  std::vector<std::string> source_ids;
  InputShape shape;
};

MaterializedPool materialize(const std::vector<LabeledExample>& pool, const SampleLoader& loader);

// D = D_L followed by D_U, both loaded with their own manifests.
struct TrainingData {
  MaterializedPool labeled;
  MaterializedPool unlabeled;
  MaterializedPool validation;
  MaterializedPool test;
};
TrainingData load_training_data(const DatasetSplit& split);
TrainingData load_training_data(const DatasetSplit& split, const Manifest& manifest, const Manifest& unlabeled_manifest);

// ---- augmentation -------------------------------------------------------

struct AugmentationPolicy {
  enum class Kind { ContrastivePretrain, ProbeFinetune, None };
  Kind kind = Kind::None;
  double crop_scale_min = 1.0;
  double crop_scale_max = 1.0;
  double flip_prob = 0.0;
  double jitter_prob = 0.0;
  double brightness = 0.0;
  double contrast = 0.0;
  double saturation = 0.0;
  double hue = 0.0;
  double grayscale_prob = 0.0;

  static AugmentationPolicy contrastive_pretrain();
  static AugmentationPolicy probe_finetune();
  static AugmentationPolicy none();
  // Contrastive pretraining kind with every stochastic transform disabled.
  static AugmentationPolicy identity_pretrain();
};

const char* to_string(AugmentationPolicy::Kind kind);

// Per-example stream; the two views of augment_pair draw from it in sequence.
Rng augmentation_stream(std::uint64_t seed, const std::string& source_id, int epoch);

// One stochastic draw of the pipeline: crop, flip, jitter, grayscale. Images
// get a random resized crop and a horizontal flip; feature vectors (1 x 1
// spatial) skip both. Jitter treats the channel axis as color.
Vector augment(const Vector& x, InputShape shape, const AugmentationPolicy& policy, Rng& rng);

// Two independent views for contrastive pretraining. Misuse error unless the
// policy kind is ContrastivePretrain.
std::pair<Vector, Vector> augment_pair(const Vector& x, InputShape shape, const AugmentationPolicy& policy,
                                       Rng& rng);

}  // namespace sscl
