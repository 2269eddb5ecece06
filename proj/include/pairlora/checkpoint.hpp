#pragma once

// Binary checkpoint container: magic "PAIRLORA", version, a key/value
// hyperparameter block, a named-parameter table and a raw little-endian f32
// payload, closed by an FNV-1a64 checksum over everything before it.
// load(save(x)) is bitwise lossless; truncation or corruption fails the load
// before any state is handed out.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pairlora/tensor.hpp"

namespace pairlora {

inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'I', 'R', 'L', 'O', 'R', 'A'};
inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr uint32_t kCheckpointKindModel = 1;
inline constexpr uint32_t kCheckpointKindAdapter = 2;

struct CheckpointMeta {
    std::map<std::string, int64_t> ints;
    std::map<std::string, double> floats;
    std::map<std::string, std::string> strings;

    int64_t geti(const std::string& k) const;
    double getf(const std::string& k) const;
    const std::string& gets(const std::string& k) const;
};

struct CheckpointTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

struct Checkpoint {
    uint32_t kind = 0;
    CheckpointMeta meta;
    std::vector<CheckpointTensor> tensors;  // in file order

    const CheckpointTensor& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// serialize to bytes (golden-file tests pin this layout)
std::vector<uint8_t> checkpoint_to_bytes(const Checkpoint& ckpt);
Checkpoint checkpoint_from_bytes(const std::vector<uint8_t>& bytes);

class Denoiser;
struct NoiseSchedule;

void save_denoiser(const Denoiser& model, const std::string& path,
                   const CheckpointMeta& extra_meta = {});
// constructs the model from the stored hyperparameters
std::unique_ptr<Denoiser> load_denoiser(const std::string& path, CheckpointMeta* meta_out = nullptr);

}  // namespace pairlora
