#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cnkit/common.hpp"

namespace cnkit::corpus {

struct Post {
  std::string id;
  std::string title;
  std::string body;
  std::set<std::string> target_tags;
  long score = 0;

  std::string text() const;  // title and body joined for embedding
};

struct Comment {
  std::string id;
  std::string post_id;
  std::string body;
  long upvotes = 0;
  long downvotes = 0;
  bool delta_awarded = false;
};

struct Sentence {
  std::string comment_id;
  std::size_t index = 0;
  std::string text;

  std::string id() const;  // "<comment_id>#<index>"
};

struct HateSpeechSample {
  std::string id;
  std::string text;
  std::string target;
};

class IngestError : public Error {
 public:
  IngestError(std::string message, std::size_t line, std::vector<std::string> dangling = {})
      : Error(std::move(message)), line_(line), dangling_(std::move(dangling)) {}
  std::size_t line() const { return line_; }  // 0 when not tied to one line
  const std::vector<std::string>& dangling() const { return dangling_; }

 private:
  std::size_t line_;
  std::vector<std::string> dangling_;
};

/// Immutable after construction. Posts and comments keep ingestion order.
class KnowledgeRepository {
 public:
  KnowledgeRepository() = default;
  KnowledgeRepository(std::vector<Post> posts, std::vector<Comment> comments);

  const std::vector<Post>& posts() const { return posts_; }
  const std::vector<Comment>& comments() const { return comments_; }
  const std::vector<Sentence>& sentences() const { return sentences_; }

  const Post* find_post(std::string_view id) const;
  const Comment* find_comment(std::string_view id) const;
  /// Indices into comments() of the comments replying to a post.
  const std::vector<std::size_t>& comments_of(std::string_view post_id) const;
  /// Indices into sentences() of a comment's sentences, in order.
  const std::vector<std::size_t>& sentences_of(std::string_view comment_id) const;

  bool empty() const { return posts_.empty(); }

 private:
  std::vector<Post> posts_;
  std::vector<Comment> comments_;
  std::vector<Sentence> sentences_;
  std::unordered_map<std::string, std::size_t> post_index_;
  std::unordered_map<std::string, std::size_t> comment_index_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_post_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_comment_;
};

struct IngestOptions {
  /// Drop comments whose post_id is unknown instead of failing.
  bool drop_dangling = false;
};

struct IngestResult {
  KnowledgeRepository repo;
  std::vector<std::string> dangling;  // ids of rejected comments
};

/// Parses line-delimited post/comment records. Blank lines are skipped.
IngestResult ingest(std::istream& records, const IngestOptions& options = {});
IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& options = {});

/// Deletes comments with strictly fewer up-votes than down-votes.
KnowledgeRepository filter_comments(const KnowledgeRepository& repo);

/// Posts tagged with `target`, score descending then id ascending, at most `limit`.
std::vector<Post> query_posts_by_target(const KnowledgeRepository& repo, std::string_view target, std::size_t limit);

/// Splits on . ! ? followed by whitespace and an upper-case letter, except
/// after a known abbreviation.
std::vector<Sentence> split_sentences(const Comment& comment);
std::vector<std::string> split_sentences(std::string_view text);

void save(const KnowledgeRepository& repo, const std::filesystem::path& dir);
KnowledgeRepository load(const std::filesystem::path& dir);

std::vector<HateSpeechSample> read_hate_speech(std::istream& in);
std::vector<HateSpeechSample> read_hate_speech_file(const std::filesystem::path& path);

}  // namespace cnkit::corpus
