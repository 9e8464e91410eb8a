// Copyright (c) the Heliopress Authors. All rights reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef HELIOPRESS_SELFTEST_HPP_
#define HELIOPRESS_SELFTEST_HPP_

#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace hp {

struct SelftestResult {
  std::vector<std::pair<std::string, bool>> checks;
  bool all_passed() const {
    for (const auto& [name, ok] : checks) {
      if (!ok) return false;
    }
    return !checks.empty();
  }
};

// Fast internal diagnostics: gradient checks, coder round-trips, attention
// brute-force oracles, and a tiny end-to-end codec parity run.  When
// inject_gradient_fault is set, an extra check runs grad_check against an
// operation with a deliberately wrong backward formula and passes only if
// the checker flags it.
SelftestResult selftest(bool inject_gradient_fault = false,
                        std::ostream* out = nullptr);

}  // namespace hp

#endif  // HELIOPRESS_SELFTEST_HPP_
