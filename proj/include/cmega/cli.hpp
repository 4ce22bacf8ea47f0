// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace cmega {

/// Exit codes: 0 ok, 1 internal error, 2 config error, 3 data error,
/// 4 undefined metric.
int run_cli(const std::vector<std::string>& args);

}  // namespace cmega
