import altair as alt


def build(data):
    return alt.Chart(data).mark_area().encode(x="month:T", y="total:Q")
