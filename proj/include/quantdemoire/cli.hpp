#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "quantdemoire/pipeline.hpp"

namespace qdm {

/// Settings shared by every subcommand. Flags override config-file keys, which override
/// these defaults.
struct RunConfig {
    std::uint64_t seed = 7;
    int bits_w = 4;
    int bits_a = 4;
    double beta = 0.005;
    double gamma1 = 1e-3;
    double gamma2 = 1e-3;
    double alpha = 0.5;
    int freq_level = 3;
    int epochs = 4;
    double lr = 1e-3;
    double lambda_p = 1.0;
    int crop = 64;
    std::string method = "quantdemoire";
    std::string out;
    std::string ckpt;
    std::string data;

    int train_epochs = 30;
    double train_lr = 1e-3;
    int n_train = 500;
    int n_calib = 50;
    int n_test = 50;
    int size = 64;
    double percentile = 0.999;
    int bins = 64;
};

/// Thrown for malformed configuration or command lines; maps to exit status 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sets one key from its textual value. Unknown keys and out-of-range values throw UsageError.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
/// Applies "key = value" lines; '#' starts a comment.
void apply_config_text(RunConfig& cfg, const std::string& text);
/// Cross-field checks run after every source has been applied.
void validate(const RunConfig& cfg);
std::string format_config(const RunConfig& cfg);
CalibConfig calib_config(const RunConfig& cfg);

/// Entry point. args excludes the program name. Returns 0 on success, 2 on usage errors
/// and 1 when the pipeline fails.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace qdm
