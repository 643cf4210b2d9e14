import { CurationApi } from "./api";
import { ReviewBoard, holderId } from "./app";
import { StatsPanel } from "./stats";

// base URL is configurable: ?api=http://host:port, else same origin
const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("api") ?? "";
const api = new CurationApi(baseUrl);

const board = new ReviewBoard(
  document.getElementById("board")!,
  api,
  holderId(),
);
const stats = new StatsPanel(document.getElementById("stats")!, api);

void board.fetchNext();
stats.start();
