#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace hkd {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Plain key=value run configuration. '#' starts a comment, blank lines are
// ignored. Unknown keys are rejected; missing keys fall back to documented
// defaults. The raw file text is preserved byte-identically for checkpoint
// echo.
class RunConfig {
public:
    static RunConfig from_file(const std::string& path);
    static RunConfig from_text(const std::string& text);

    const std::string& text() const { return text_; }

    bool has(const std::string& key) const;
    std::string get(const std::string& key) const;
    int get_int(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;

    static const std::map<std::string, std::string>& defaults();

private:
    std::string text_;
    std::map<std::string, std::string> values_;
};

}  // namespace hkd
