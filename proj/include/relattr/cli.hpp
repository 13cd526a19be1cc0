// Copyright 2026 The relattr Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#ifndef RELATTR_CLI_HPP_
#define RELATTR_CLI_HPP_

#include <string>
#include <vector>

namespace relattr::cli {

// Process exit codes, one per error class.
enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,          // bad flags, bad config, conflicting settings
  kMissingFile = 3,
  kDataError = 4,      // malformed or inconsistent inputs
  kDiverged = 5,
  kCheckFailed = 6,    // empty report cell, failed gradient check
};

// Corpus directory layout shared by every subcommand.
inline constexpr const char* kVocabFile = "vocab.txt";
inline constexpr const char* kManifestFile = "embeddings.tsv";
inline constexpr const char* kBlobFile = "embeddings.bin";
inline constexpr const char* kSplitFile = "splits.txt";
inline constexpr const char* kTrainFile = "train.txt";
inline constexpr const char* kValidationFile = "validation.txt";
inline constexpr const char* kTestSeenFile = "test_seen.txt";
inline constexpr const char* kTestUnseenFile = "test_unseen.txt";

// `args` excludes the program name. Logs go to stderr, data to files
// under --out-dir, summaries to stdout.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

}  // namespace relattr::cli

#endif  // RELATTR_CLI_HPP_
