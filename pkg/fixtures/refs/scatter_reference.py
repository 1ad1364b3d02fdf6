import matplotlib.pyplot as plt


def draw(x, y, colors):
    plt.scatter(x, y, c=colors, alpha=0.6)
    plt.xlabel("x")
    plt.ylabel("y")
    plt.show()
