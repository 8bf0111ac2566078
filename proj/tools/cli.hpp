// Copyright 2026 The TrojanLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "trojanlab/providers.hpp"

namespace trojanlab::cli {

/// Collaborators the command line wires in. Tests swap the transport for
/// one that fails loudly.
struct Environment {
  std::shared_ptr<providers::Transport> transport = std::make_shared<providers::HttpTransport>();
  providers::EnvLookup env = providers::process_env;
};

/// Runs one invocation; `args` excludes the program name. Returns 0 on
/// success, 1 on a domain error and 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Environment& environment = {});

}  // namespace trojanlab::cli
