#include "stemscribe/notation.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <fstream>
#include <map>

#include "test_util.hpp"

using namespace stemscribe;
using namespace stemscribe::notation;

namespace {

EnvLookup fake_env(std::map<std::string, std::string> vars) {
  return [vars](const std::string& k) -> std::optional<std::string> {
    const auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

fs::path touch(const fs::path& p, const std::string& body = "MThd") {
  std::ofstream(p) << body;
  return p;
}

}  // namespace

TEST(BuildCommand, ReproducesDocumentedInvocation) {
  const NotationJob job{"example.mid", "example.pdf", "mscore"};
  EXPECT_EQ(build_command(job),
            (std::vector<std::string>{"mscore", "example.mid", "-o", "example.pdf"}));
  const NotationJob xml{"example.mid", "example.musicxml", "mscore"};
  EXPECT_EQ(build_command(xml)[3], "example.musicxml");
}

TEST(BuildCommand, SpacesStayInsideOneArgument) {
  const NotationJob job{"my song.mid", "out dir/my song.pdf", "/opt/muse score/mscore"};
  const auto argv = build_command(job);
  ASSERT_EQ(argv.size(), 4u);
  EXPECT_EQ(argv[0], "/opt/muse score/mscore");
  EXPECT_EQ(argv[1], "my song.mid");
  EXPECT_EQ(argv[3], "out dir/my song.pdf");
}

TEST(ResolveExecutable, Precedence) {
  testutil::TempDir dir;
  fs::create_directories(dir.path() / "a");
  fs::create_directories(dir.path() / "bin");
  const auto explicit_exe = testutil::write_script(dir.path() / "a" / "custom", "exit 0");
  const auto env_exe = testutil::write_script(dir.path() / "envmuse", "exit 0");
  const auto path_exe = testutil::write_script(dir.path() / "bin" / "mscore", "exit 0");
  const std::string path_var = "/nonexistent:" + (dir.path() / "bin").string();

  auto all = fake_env({{"MUSESCORE_PATH", env_exe.string()}, {"PATH", path_var}});
  EXPECT_EQ(resolve_executable(all, explicit_exe), explicit_exe);
  EXPECT_EQ(resolve_executable(all), env_exe);
  EXPECT_EQ(resolve_executable(fake_env({{"PATH", path_var}})), path_exe);
}

TEST(ResolveExecutable, NotFoundNamesEveryProbe) {
  try {
    resolve_executable(fake_env({{"MUSESCORE_PATH", "/no/such/muse"}, {"PATH", "/no/dir"}}),
                       fs::path("/no/such/explicit"));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kExecutableNotFound);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("/no/such/explicit"), std::string::npos);
    EXPECT_NE(msg.find("MUSESCORE_PATH"), std::string::npos);
    EXPECT_NE(msg.find("/no/such/muse"), std::string::npos);
    EXPECT_NE(msg.find("mscore"), std::string::npos);
  }
}

TEST(Job, Validation) {
  testutil::TempDir dir;
  const auto midi = touch(dir.path() / "a.mid");
  EXPECT_NO_THROW((NotationJob{midi, dir.path() / "a.png", "x"}.validate()));
  EXPECT_THROW((NotationJob{midi, dir.path() / "a.txt", "x"}.validate()), Error);
  EXPECT_THROW((NotationJob{dir.path() / "missing.mid", dir.path() / "a.pdf", "x"}.validate()),
               Error);
}

TEST(ExportSheet, StubSucceeds) {
  testutil::TempDir dir;
  const auto midi = touch(dir.path() / "in put.mid");
  const NotationJob job{midi, dir.path() / "out put.pdf", testutil::copying_stub(dir.path())};
  EXPECT_EQ(export_sheet(job), job.output_path);
  EXPECT_GT(fs::file_size(job.output_path), 0u);
}

TEST(ExportSheet, NonzeroExitCarriesStderr) {
  testutil::TempDir dir;
  const auto midi = touch(dir.path() / "a.mid");
  const auto exe = testutil::write_script(dir.path() / "fail", "echo 'cannot engrave' >&2\nexit 1");
  try {
    export_sheet({midi, dir.path() / "a.pdf", exe});
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProcessFailed);
    EXPECT_NE(std::string(e.what()).find("cannot engrave"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("exit code 1"), std::string::npos);
  }
}

TEST(ExportSheet, SuccessWithoutOutputIsAnError) {
  testutil::TempDir dir;
  const auto midi = touch(dir.path() / "a.mid");
  const auto quiet = testutil::write_script(dir.path() / "quiet", "exit 0");
  try {
    export_sheet({midi, dir.path() / "a.pdf", quiet});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOutputMissing);
  }
  const auto empty = testutil::write_script(dir.path() / "empty", ": > \"$3\"");
  try {
    export_sheet({midi, dir.path() / "b.pdf", empty});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOutputMissing);
  }
}

TEST(ExportSheet, TimeoutKillsTheProcess) {
  testutil::TempDir dir;
  const auto midi = touch(dir.path() / "a.mid");
  const auto slow = testutil::write_script(dir.path() / "slow", "exec sleep 30");
  const auto start = std::chrono::steady_clock::now();
  try {
    export_sheet({midi, dir.path() / "a.pdf", slow}, std::chrono::milliseconds(200));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTimeout);
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 5.0);
}

TEST(ExportSheet, MissingExecutable) {
  testutil::TempDir dir;
  const auto midi = touch(dir.path() / "a.mid");
  try {
    export_sheet({midi, dir.path() / "a.pdf", dir.path() / "nope"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kExecutableNotFound);
  }
}
