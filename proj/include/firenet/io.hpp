#pragma once

// On-disk formats. Every file is a text header followed by a little-endian
// binary payload; every write goes to a temporary file that is then renamed
// over the target.

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "firenet/data.hpp"
#include "firenet/network.hpp"
#include "firenet/train.hpp"

namespace firenet::inline FIRENET_ABI {

namespace fs = std::filesystem;

/// Creates missing parent directories.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

// ---- volumes --------------------------------------------------------------

enum class DType { F32, U8 };
const char* dtype_name(DType t);

/// Header:
///   firenet-volume 1
///   dims = D H W
///   channels = C
///   dtype = f32 | u8
///   spacing_mm = sd sh sw
///   class_names = a, b, c        (optional)
///   end
/// then C*D*H*W values, channel-major, then depth, height, width.
struct Volume {
  Extent3 dims{1, 1, 1};
  int64_t channels = 1;
  DType dtype = DType::F32;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<std::string> class_names;
  std::vector<float> f32;    // used when dtype == F32
  std::vector<uint8_t> u8;   // used when dtype == U8

  int64_t value_count() const { return channels * dims[0] * dims[1] * dims[2]; }
  void validate() const;
};

Volume image_volume(const Tensor5& image, const Spacing& spacing);
/// Throws ConfigError for labels outside [0, 255].
Volume label_volume(const std::vector<int>& labels, const Extent3& extent, const Spacing& spacing,
                    const std::vector<std::string>& class_names = {});
/// (1, C, D, H, W) from an f32 volume.
Tensor5 volume_tensor(const Volume& v);
/// Single-channel u8 volume to labels.
std::vector<int> volume_labels(const Volume& v);

std::string encode_volume(const Volume& v);
/// `what` names the source in error messages.
Volume decode_volume(const std::string& bytes, const std::string& what = "volume");
void save_volume(const fs::path& path, const Volume& v);
Volume load_volume(const fs::path& path);

// ---- checkpoints ----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

/// Everything a checkpoint file holds. Parameter and moment buffers are
/// stored as f32 whatever the build's real type.
struct Checkpoint {
  struct Entry {
    std::string name;
    ParamGroup group = ParamGroup::EncoderDecoder;
    Shape shape;
    std::vector<float> values;
  };
  NetworkConfig config;
  std::vector<std::pair<std::string, std::string>> training;  // summary and resume state
  std::vector<Entry> params;
  std::map<std::string, AdamMoments> moments;  // empty unless saved for resuming

  const std::string* training_value(const std::string& key) const;
};

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& what = "checkpoint");

Checkpoint capture(const Network& net);
/// Builds a network from the checkpoint's config and fills every parameter,
/// checking each name and shape against the freshly built layout.
Network restore(const Checkpoint& c);

void save_checkpoint(const fs::path& path, const Checkpoint& c);
Checkpoint load_checkpoint_file(const fs::path& path);
Network load_network(const fs::path& path);

/// Transfer load: `expected` must equal the checkpoint's config in every
/// field except num_classes; the error lists the fields that differ. With
/// `replace_head` > 0 the head is re-initialised for that many classes from
/// `seed`; otherwise the class counts must match too.
Network load_for_transfer(const Checkpoint& c, const NetworkConfig& expected, int replace_head,
                          uint64_t seed);

/// Full resumable state: parameters, Adam moments, counters and the rng.
Checkpoint capture_state(const Network& net, const Trainer& trainer);
/// Applies capture_state() output to a trainer built on an identical network.
void restore_state(const Checkpoint& c, Network& net, Trainer& trainer);

// ---- bundles --------------------------------------------------------------

/// Writes one image and one label volume per example plus manifest.txt, which
/// lists datasets, class names, split assignment and file names.
void save_bundle(const fs::path& dir, const DatasetBundle& bundle, uint64_t seed);
/// Reads manifest.txt and every volume it references.
DatasetBundle load_bundle(const fs::path& dir);

}  // namespace firenet
