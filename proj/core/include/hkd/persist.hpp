#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hkd/teacher.hpp"
#include "hkd/tensor.hpp"

namespace hkd {

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct format_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct unsupported_version_error : format_error {
    using format_error::format_error;
};
struct corruption_error : format_error {
    using format_error::format_error;
};

// Named parameter table plus the run configuration echoed as opaque UTF-8.
struct Checkpoint {
    std::string config_echo;
    std::vector<std::pair<std::string, Tensor>> params;

    const Tensor& param(const std::string& name) const;
};

// "HKDT" little-endian binary container; byte layout documented in FORMATS.md.
// Writes are atomic (temp file + rename). read(write(ds)) is bit-exact.
void write_dataset(const TrajectoryDataset& ds, const std::string& path);
TrajectoryDataset read_dataset(const std::string& path);

// "HKDC" container. read_checkpoint validates every parameter shape against
// the model configuration parsed from the config echo.
void write_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace hkd
